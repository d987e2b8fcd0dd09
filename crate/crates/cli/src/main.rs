use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use textwalk::analysis::{
    importance_scores, nearest_neighbors, write_heatmap_csv, write_heatmap_svg, write_neighbors_csv,
};
use textwalk::evaluation::{build_split, evaluate, EdgeSplit, Strategy, DEFAULT_FRACTION};
use textwalk::fixtures::{generate, FixtureSpec, DEFAULT_MODIFIERS};
use textwalk::graph::{read_descriptors, Graph};
use textwalk::model_io::{read_model, write_model};
use textwalk::walks::write_walks;
use textwalk::{train, EncoderKind, Exec, TrainConfig};

#[derive(Parser)]
#[command(name = "textwalk", version, about = "Content-aware node embeddings from random walks and node descriptors")]
struct Cli {
    /// Worker threads (1 runs everything sequentially).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Accepted for scripts; every mode is already reproducible for a fixed seed.
    #[arg(long, global = true)]
    deterministic: bool,
    /// TOML file with `[train]`, `[train.walk]` and `[split]` tables. Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic compositional hierarchy.
    Synth(SynthArgs),
    /// Hold out edges and sample negatives for link prediction.
    Split(SplitArgs),
    /// Train an encoder on a graph or on the training part of a split.
    Train(TrainArgs),
    /// Score a trained model on a split.
    Eval(EvalArgs),
    /// Nearest nodes by cosine similarity.
    Neighbors(NeighborsArgs),
    /// Per-token importance scores of a BiGRU model.
    Heatmap(HeatmapArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 17)]
    base_concepts: usize,
    /// Comma-separated modifier words.
    #[arg(long, value_delimiter = ',')]
    modifiers: Option<Vec<String>>,
    #[arg(long, default_value_t = 5)]
    depth: usize,
    /// Children per node, each with a different unused modifier.
    #[arg(long, default_value_t = 3)]
    branching: usize,
    #[arg(long, default_value_t = 600)]
    cross_links: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for edges.tsv, descriptors.tsv and manifest.toml.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    /// Edge file (`child<TAB>parent`).
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Split file; its training edges become the graph.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Descriptor file (`key<TAB>text`).
    #[arg(long)]
    descriptors: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct SplitArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    descriptors: PathBuf,
    #[arg(long)]
    fraction: Option<f64>,
    /// random or close-proximity.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// lookup, avg, gru or bigru-max-res.
    #[arg(long)]
    encoder: EncoderKind,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    walks_per_node: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model file; the run manifest goes next to it with a `.manifest.toml` suffix.
    #[arg(long)]
    out: PathBuf,
    /// Also dump the walks, one per line.
    #[arg(long)]
    walks_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    descriptors: PathBuf,
    /// Report file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NeighborsArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    model: PathBuf,
    /// Target node key.
    #[arg(long)]
    node: String,
    #[arg(long, default_value_t = 5)]
    top_n: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated node keys.
    #[arg(long, value_delimiter = ',', required = true)]
    nodes: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the rows as an SVG image.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitConfig {
    fraction: f64,
    strategy: Strategy,
    seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fraction: DEFAULT_FRACTION, strategy: Strategy::CloseProximity, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    train: TrainConfig,
    split: SplitConfig,
}

#[derive(Serialize)]
struct TrainManifest<'a> {
    encoder: &'a str,
    nodes: usize,
    edges: usize,
    pair_count: usize,
    batch_count: usize,
    initial_mean_loss: f64,
    final_mean_loss: f64,
    wall_time_secs: f64,
    config: &'a TrainConfig,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| textwalk::Error::InvalidConfig(vec![e.message().to_owned()]).into())
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_or_stdout(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, write),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn descriptors(path: &Path) -> Result<std::collections::HashMap<String, String>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_descriptors(BufReader::new(file))?)
}

fn read_split(path: &Path, descriptors_path: &Path) -> Result<EdgeSplit> {
    let texts = descriptors(descriptors_path)?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(EdgeSplit::read(BufReader::new(file), |k| texts.get(k).cloned())?)
}

fn graph_files(edges: &Path, descriptors: &Path) -> Result<Graph> {
    textwalk::load_graph(edges, descriptors)
        .with_context(|| format!("loading {} and {}", edges.display(), descriptors.display()))
}

fn load(args: &GraphArgs) -> Result<Graph> {
    match (&args.edges, &args.split) {
        (Some(edges), None) => graph_files(edges, &args.descriptors),
        (None, Some(split)) => Ok(read_split(split, &args.descriptors)?.train_graph),
        _ => bail!(textwalk::Error::InvalidConfig(vec!["pass exactly one of --edges or --split".into()])),
    }
}

fn load_model(path: &Path) -> Result<textwalk::EncoderModel> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_model(BufReader::new(file))?)
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = FixtureSpec {
        base_concepts: args.base_concepts,
        modifiers: args
            .modifiers
            .unwrap_or_else(|| DEFAULT_MODIFIERS.iter().map(|s| s.to_string()).collect()),
        depth: args.depth,
        branching: Some(args.branching),
        cross_links: args.cross_links,
        seed: args.seed,
    };
    let fixture = generate(&spec)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_atomic(&args.out.join("edges.tsv"), |w| Ok(fixture.write_edges(w)?))?;
    write_atomic(&args.out.join("descriptors.tsv"), |w| Ok(fixture.write_descriptors(w)?))?;
    write_atomic(&args.out.join("manifest.toml"), |w| Ok(w.write_all(fixture.manifest_toml().as_bytes())?))?;
    log::info!("{} nodes, {} edges", fixture.manifest.node_count, fixture.manifest.edge_count);
    Ok(())
}

fn split(args: SplitArgs, config: FileConfig) -> Result<()> {
    let cfg = SplitConfig {
        fraction: args.fraction.unwrap_or(config.split.fraction),
        strategy: args.strategy.unwrap_or(config.split.strategy),
        seed: args.seed.unwrap_or(config.split.seed),
    };
    let g = graph_files(&args.edges, &args.descriptors)?;
    let s = build_split(&g, cfg.fraction, cfg.strategy, cfg.seed)?;
    write_atomic(&args.out, |w| Ok(s.write(w)?))?;
    log::info!("{} test positives, {} test negatives", s.test_positives.len(), s.test_negatives.len());
    Ok(())
}

fn train_cmd(args: TrainArgs, config: FileConfig, exec: Exec) -> Result<()> {
    let mut cfg = config.train;
    macro_rules! set {
        ($($target:expr => $flag:expr),* $(,)?) => { $(if let Some(v) = $flag { $target = v; })* };
    }
    set!(
        cfg.dim => args.dim, cfg.batch_size => args.batch_size, cfg.negatives_per_pair => args.negatives,
        cfg.epochs => args.epochs, cfg.learning_rate => args.learning_rate, cfg.seed => args.seed,
        cfg.walk.walks_per_node => args.walks_per_node, cfg.walk.walk_length => args.walk_length,
        cfg.walk.window => args.window, cfg.walk.p => args.p, cfg.walk.q => args.q,
    );
    cfg.validate()?;
    let g = load(&args.graph)?;
    let out = train(&g, args.encoder, &cfg, exec)?;
    log::info!(
        "{} pairs in {} batches, {:.1}s, final mean loss {:.4}",
        out.stats.pair_count,
        out.stats.batch_count,
        out.stats.wall_time_secs,
        out.stats.final_mean_loss()
    );
    write_atomic(&args.out, |w| Ok(write_model(&out.model, w)?))?;
    let manifest = TrainManifest {
        encoder: args.encoder.name(),
        nodes: g.node_count(),
        edges: g.edge_count(),
        pair_count: out.stats.pair_count,
        batch_count: out.stats.batch_count,
        initial_mean_loss: out.stats.initial_mean_loss(),
        final_mean_loss: out.stats.final_mean_loss(),
        wall_time_secs: out.stats.wall_time_secs,
        config: &cfg,
    };
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.toml");
    write_atomic(Path::new(&manifest_path), |w| Ok(w.write_all(toml::to_string(&manifest)?.as_bytes())?))?;
    if let Some(path) = &args.walks_out {
        write_atomic(path, |w| Ok(write_walks(&g, &out.walks, w)?))?;
    }
    Ok(())
}

fn eval(args: EvalArgs, exec: Exec) -> Result<()> {
    let model = load_model(&args.model)?;
    let s = read_split(&args.split, &args.descriptors)?;
    let report = evaluate(&model, &s, exec)?;
    write_or_stdout(args.out.as_deref(), |w| Ok(w.write_all(report.to_toml().as_bytes())?))
}

fn neighbors(args: NeighborsArgs, exec: Exec) -> Result<()> {
    let g = load(&args.graph)?;
    let model = load_model(&args.model)?;
    let inputs = model.inputs(&g)?;
    let target = g.require_node(&args.node)?;
    let result = nearest_neighbors(&model, &inputs, &g, target, args.top_n, exec)?;
    write_or_stdout(args.out.as_deref(), |w| Ok(write_neighbors_csv(&g, &result, w)?))
}

fn heatmap(args: HeatmapArgs) -> Result<()> {
    let g = load(&args.graph)?;
    let model = load_model(&args.model)?;
    let inputs = model.inputs(&g)?;
    let rows = args
        .nodes
        .iter()
        .map(|k| importance_scores(&model, &inputs, g.require_node(k)?))
        .collect::<textwalk::Result<Vec<_>>>()?;
    if let Some(svg) = &args.svg {
        write_atomic(svg, |w| Ok(write_heatmap_svg(&g, &rows, w)?))?;
    }
    write_or_stdout(args.out.as_deref(), |w| Ok(write_heatmap_csv(&g, &rows, w)?))
}

fn exec_for(threads: Option<usize>) -> Result<Exec> {
    match threads {
        Some(0) => bail!(textwalk::Error::InvalidConfig(vec!["threads must be at least 1".into()])),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting thread pool")?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None if cfg!(feature = "parallel") => Ok(Exec::Parallel),
        None => Ok(Exec::Sequential),
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let mut problems = config.train.problems();
    let sc = &config.split;
    if !(sc.fraction > 0.0 && sc.fraction < 1.0) {
        problems.push(format!("split: fraction must lie in (0, 1) (got {})", sc.fraction));
    }
    if !problems.is_empty() {
        bail!(textwalk::Error::InvalidConfig(problems));
    }
    let exec = exec_for(cli.threads)?;
    if cli.deterministic {
        log::debug!("deterministic mode requested");
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Split(a) => split(a, config),
        Command::Train(a) => train_cmd(a, config, exec),
        Command::Eval(a) => eval(a, exec),
        Command::Neighbors(a) => neighbors(a, exec),
        Command::Heatmap(a) => heatmap(a),
    }
}

fn error_code(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<textwalk::Error>() {
        return e.code();
    }
    if err.chain().any(|c| c.is::<std::io::Error>() || c.is::<tempfile::PersistError>()) {
        return "Io";
    }
    "Internal"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TEXTWALK_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let line = serde_json::json!({ "error": "Usage", "message": e.to_string().trim_end() });
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": error_code(&err), "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
