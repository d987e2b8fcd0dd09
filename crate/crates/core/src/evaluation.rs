//! Link-prediction protocol: connectivity-preserving edge removal, random and
//! close-proximity negative pairs, cosine and logistic-regression predictors,
//! and rank-based AUC.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoders::{EncoderModel, Side};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{canonical, Graph, NodeId};
use crate::seeding;
use crate::tensor::{cosine, dot, sigmoid, Matrix};

pub type Pair = (NodeId, NodeId);

/// Removal fraction matching the held-out share of the ISA network.
pub const DEFAULT_FRACTION: f64 = 0.17;
/// Directed steps beyond which two nodes count as hierarchy-unrelated.
pub const HIERARCHY_DEPTH_CAP: usize = 10;
/// Ancestor distance band searched by the close-proximity sampler.
pub const ANCESTOR_HOPS: std::ops::RangeInclusive<usize> = 2..=5;
/// Maximum number of passes over all focus nodes before giving up.
pub const MAX_SAMPLER_PASSES: usize = 50;

pub const LR_L2: f64 = 1e-4;
pub const LR_TOLERANCE: f64 = 1e-7;
pub const LR_MAX_ITERATIONS: usize = 5000;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Random,
    CloseProximity,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::CloseProximity => "close-proximity",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Strategy::Random),
            "close-proximity" => Ok(Strategy::CloseProximity),
            _ => Err(format!("unknown strategy `{s}` (expected random or close-proximity)")),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

pub struct PositiveSplit {
    pub train_graph: Graph,
    pub test_positives: Vec<Pair>,
}

/// Removes `max(1, ⌊fraction·|E|⌋)` edges outside a random spanning tree, so
/// the pruned graph stays connected.
pub fn split_edges(g: &Graph, fraction: f64, seed: u64) -> Result<PositiveSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(vec![format!("fraction must lie in (0, 1) (got {fraction})")]));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let target = ((fraction * g.edge_count() as f64).floor() as usize).max(1);
    let mut rng = seeding::rng(seed, seeding::SPLIT);
    let mut edges: Vec<Pair> = g.edges().collect();
    edges.shuffle(&mut rng);
    let mut uf = UnionFind::new(g.node_count());
    let mut removable: Vec<Pair> = edges.into_iter().filter(|&(a, b)| !uf.union(a.index(), b.index())).collect();
    if removable.len() < target {
        return Err(Error::SplitInfeasible { achieved: removable.len(), target });
    }
    removable.shuffle(&mut rng);
    removable.truncate(target);
    removable.sort_unstable();
    let removed: HashSet<Pair> = removable.iter().copied().collect();
    Ok(PositiveSplit { train_graph: g.without_edges(&removed), test_positives: removable })
}

fn random_negatives<R: Rng + ?Sized>(g: &Graph, count: usize, exclude: &HashSet<Pair>, rng: &mut R) -> Result<Vec<Pair>> {
    let n = g.node_count() as u128;
    let excluded_non_edges = exclude.iter().filter(|&&(a, b)| a != b && !g.has_edge(a, b)).count() as u128;
    let available = (n * n.saturating_sub(1) / 2)
        .saturating_sub(g.edge_count() as u128)
        .saturating_sub(excluded_non_edges);
    if available < count as u128 {
        return Err(Error::NotEnoughNegatives { found: available as usize, needed: count });
    }
    let eligible = |a: NodeId, b: NodeId| a != b && !g.has_edge(a, b) && !exclude.contains(&canonical(a, b));
    let mut out = if 2 * count as u128 > available {
        let mut all: Vec<Pair> = Vec::new();
        for a in g.nodes() {
            for b in g.nodes().skip(a.index() + 1) {
                if eligible(a, b) {
                    all.push((a, b));
                }
            }
        }
        all.shuffle(rng);
        all.truncate(count);
        all
    } else {
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let a = NodeId::from(rng.random_range(0..g.node_count()));
            let b = NodeId::from(rng.random_range(0..g.node_count()));
            if eligible(a, b) && seen.insert(canonical(a, b)) {
                out.push(canonical(a, b));
            }
        }
        out
    };
    out.sort_unstable();
    Ok(out)
}

/// Uniform node pairs that share no edge in `g`, without duplicates.
pub fn sample_random_negatives(g: &Graph, count: usize, seed: u64) -> Result<Vec<Pair>> {
    random_negatives(g, count, &HashSet::new(), &mut seeding::rng(seed, seeding::SAMPLER))
}

fn close_proximity_negatives<R: Rng + ?Sized>(
    g: &Graph,
    count: usize,
    exclude: &HashSet<Pair>,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    let mut foci: Vec<NodeId> = g.nodes().collect();
    foci.shuffle(rng);
    let bands: Vec<Vec<NodeId>> = g
        .nodes()
        .map(|v| {
            g.ancestors_within(v, *ANCESTOR_HOPS.end())
                .into_iter()
                .filter(|(_, d)| ANCESTOR_HOPS.contains(d))
                .map(|(a, _)| a)
                .collect()
        })
        .collect();

    let mut seen: HashSet<Pair> = exclude.clone();
    let mut collected = Vec::new();
    let mut idle_passes = 0;
    for _ in 0..MAX_SAMPLER_PASSES {
        let before = collected.len();
        for &v in &foci {
            let Some(&ancestor) = bands[v.index()].choose(rng) else { continue };
            let Some(&u) = g.children(ancestor).choose(rng) else { continue };
            if u == v || g.has_edge(v, u) || g.is_hierarchy_relative(v, u, HIERARCHY_DEPTH_CAP) {
                continue;
            }
            if seen.insert(canonical(v, u)) {
                collected.push(canonical(v, u));
            }
        }
        if collected.len() >= count {
            break;
        }
        idle_passes = if collected.len() == before { idle_passes + 1 } else { 0 };
        if idle_passes >= 3 {
            break;
        }
    }
    if collected.len() < count {
        return Err(Error::NotEnoughNegatives { found: collected.len(), needed: count });
    }
    collected.shuffle(rng);
    collected.truncate(count);
    collected.sort_unstable();
    Ok(collected)
}

/// Hard negatives: children of a 2–5-hop ancestor that are neither ancestors
/// nor descendants of the focus node.
pub fn sample_close_proximity_negatives(g: &Graph, count: usize, seed: u64) -> Result<Vec<Pair>> {
    close_proximity_negatives(g, count, &HashSet::new(), &mut seeding::rng(seed, seeding::SAMPLER))
}

#[derive(Debug, Clone)]
pub struct EdgeSplit {
    pub train_graph: Graph,
    pub test_positives: Vec<Pair>,
    pub test_negatives: Vec<Pair>,
    pub lr_train_positives: Vec<Pair>,
    pub lr_train_negatives: Vec<Pair>,
    pub strategy: Strategy,
    pub fraction: f64,
    pub seed: u64,
}

fn negatives_for<R: Rng + ?Sized>(
    strategy: Strategy,
    g: &Graph,
    count: usize,
    exclude: &HashSet<Pair>,
    rng: &mut R,
) -> Result<Vec<Pair>> {
    match strategy {
        Strategy::Random => random_negatives(g, count, exclude, rng),
        Strategy::CloseProximity => close_proximity_negatives(g, count, exclude, rng),
    }
}

/// Full link-prediction dataset over the original graph `g`.
pub fn build_split(g: &Graph, fraction: f64, strategy: Strategy, seed: u64) -> Result<EdgeSplit> {
    let PositiveSplit { train_graph, test_positives } = split_edges(g, fraction, seed)?;
    let test_negatives = negatives_for(
        strategy,
        g,
        test_positives.len(),
        &HashSet::new(),
        &mut seeding::rng(seed, seeding::SAMPLER),
    )?;
    let mut lr_train_positives: Vec<Pair> = train_graph.edges().collect();
    lr_train_positives.sort_unstable();
    let held: HashSet<Pair> = test_negatives.iter().copied().collect();
    let lr_train_negatives = negatives_for(
        strategy,
        g,
        lr_train_positives.len(),
        &held,
        &mut seeding::rng(seed, seeding::LR_NEGATIVES),
    )?;
    Ok(EdgeSplit {
        train_graph,
        test_positives,
        test_negatives,
        lr_train_positives,
        lr_train_negatives,
        strategy,
        fraction,
        seed,
    })
}

impl EdgeSplit {
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.train_graph;
        writeln!(w, "# textwalk edge split")?;
        writeln!(w, "version\t1")?;
        writeln!(w, "strategy\t{}", self.strategy)?;
        writeln!(w, "fraction\t{}", self.fraction)?;
        writeln!(w, "seed\t{}", self.seed)?;
        writeln!(w, "[nodes]")?;
        for k in g.keys() {
            writeln!(w, "{k}")?;
        }
        writeln!(w, "[train-edges]")?;
        g.write_edges(&mut w)?;
        for (section, pairs) in [
            ("test-positives", &self.test_positives),
            ("test-negatives", &self.test_negatives),
            ("lr-negatives", &self.lr_train_negatives),
        ] {
            writeln!(w, "[{section}]")?;
            for &(a, b) in pairs {
                writeln!(w, "{}\t{}", g.key(a), g.key(b))?;
            }
        }
        Ok(())
    }

    /// Parses a split file; `descriptor_of` supplies node descriptors for the
    /// training graph.
    pub fn read<R: BufRead>(reader: R, descriptor_of: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut header: Vec<(String, String)> = Vec::new();
        let mut sections: Vec<(String, Vec<(String, String)>)> = Vec::new();
        let mut nodes: Vec<String> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_owned(), Vec::new()));
                continue;
            }
            if sections.last().is_some_and(|(name, _)| name == "nodes") {
                nodes.push(line.trim().to_owned());
                continue;
            }
            let Some((a, b)) = line.split_once('\t') else {
                return Err(Error::MalformedLine { line: line_no, reason: "expected two tab-separated fields".into() });
            };
            match sections.last_mut() {
                Some((_, rows)) => rows.push((a.to_owned(), b.to_owned())),
                None => header.push((a.to_owned(), b.to_owned())),
            }
        }
        let field = |name: &str| {
            header
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::MalformedLine { line: 0, reason: format!("missing header field `{name}`") })
        };
        let bad = |reason: String| Error::MalformedLine { line: 0, reason };
        if field("version")? != "1" {
            return Err(bad("unsupported split version".into()));
        }
        let strategy: Strategy = field("strategy")?.parse().map_err(bad)?;
        let fraction: f64 = field("fraction")?.parse().map_err(|_| bad("bad fraction".into()))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let section = |name: &str| {
            sections
                .iter()
                .find(|(s, _)| s == name)
                .map(|(_, rows)| rows.as_slice())
                .ok_or_else(|| bad(format!("missing section [{name}]")))
        };
        let train_graph = Graph::with_node_order(&nodes, section("train-edges")?, descriptor_of)?;
        let pairs = |name: &str| -> Result<Vec<Pair>> {
            section(name)?
                .iter()
                .map(|(a, b)| Ok(canonical(train_graph.require_node(a)?, train_graph.require_node(b)?)))
                .collect()
        };
        let test_positives = pairs("test-positives")?;
        let test_negatives = pairs("test-negatives")?;
        let lr_train_negatives = pairs("lr-negatives")?;
        let mut lr_train_positives: Vec<Pair> = train_graph.edges().collect();
        lr_train_positives.sort_unstable();
        Ok(Self {
            train_graph,
            test_positives,
            test_negatives,
            lr_train_positives,
            lr_train_negatives,
            strategy,
            fraction,
            seed,
        })
    }

    /// Short SHA-256 digest of the serialized split.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        Sha256::digest(&buf).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `max(0, cos)` of the focus embeddings.
pub fn cs_score(model: &EncoderModel, inputs: &crate::encoders::NodeInputs, v1: NodeId, v2: NodeId) -> Result<f64> {
    let a = model.node_embedding(inputs, v1, Side::Focus)?;
    let b = model.node_embedding(inputs, v2, Side::Focus)?;
    cosine(&a, &b).map(|c| c.max(0.0)).ok_or(Error::ZeroVector)
}

fn cs_from_rows(emb: &Matrix, (a, b): Pair) -> Result<f64> {
    cosine(emb.row(a.index()), emb.row(b.index())).map(|c| c.max(0.0)).ok_or(Error::ZeroVector)
}

fn hadamard(emb: &Matrix, (a, b): Pair) -> Vec<f64> {
    emb.row(a.index()).iter().zip(emb.row(b.index())).map(|(x, y)| x * y).collect()
}

/// L2-regularized logistic regression (bias unpenalized).
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
}

impl LogisticRegression {
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }
}

fn logistic_objective(xs: &[Vec<f64>], ys: &[f64], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let s = dot(w, x) + b;
        // log(1 + e^s) − y·s
        loss += if s > 0.0 { s + (-s).exp().ln_1p() } else { s.exp().ln_1p() } - y * s;
        let r = sigmoid(s) - y;
        crate::tensor::axpy(r, x, &mut gw);
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, wi) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wi;
    }
    loss += 0.5 * l2 * dot(w, w);
    (loss, gw, gb)
}

/// Largest eigenvalue of the bias-augmented second-moment matrix, by power
/// iteration.
fn curvature_bound(xs: &[Vec<f64>]) -> f64 {
    let d = xs[0].len() + 1;
    let n = xs.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..100 {
        let mut next = vec![0.0; d];
        for x in xs {
            let proj = dot(&x[..], &v[..d - 1]) + v[d - 1];
            crate::tensor::axpy(proj / n, x, &mut next[..d - 1]);
            next[d - 1] += proj / n;
        }
        let norm = crate::tensor::norm(&next);
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Full-batch gradient descent. The first step is `1/L` for the curvature
/// bound `L`; later steps use the Barzilai–Borwein length, halved until the
/// loss does not increase. Stops when the loss changes by less than
/// [`LR_TOLERANCE`] or after [`LR_MAX_ITERATIONS`].
pub fn fit_logistic(xs: &[Vec<f64>], ys: &[f64], l2: f64) -> LogisticRegression {
    assert!(!xs.is_empty() && xs.len() == ys.len());
    let d = xs[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let base_step = 1.0 / (0.25 * curvature_bound(xs) * 1.05 + l2).max(1e-12);
    let mut step = base_step;
    let (mut loss, mut gw, mut gb) = logistic_objective(xs, ys, &w, b, l2);
    let mut iterations = 0;
    while iterations < LR_MAX_ITERATIONS {
        iterations += 1;
        let (nw, nb, (nloss, ngw, ngb)) = loop {
            let nw: Vec<f64> = w.iter().zip(&gw).map(|(wi, gi)| wi - step * gi).collect();
            let nb = b - step * gb;
            let eval = logistic_objective(xs, ys, &nw, nb, l2);
            if eval.0 <= loss || step < 1e-300 {
                break (nw, nb, eval);
            }
            step *= 0.5;
        };
        let change = (loss - nloss).abs();
        // Barzilai–Borwein: |s|² / sᵀy over the parameter and gradient deltas.
        let mut ss = (nb - b) * (nb - b);
        let mut sy = (nb - b) * (ngb - gb);
        for i in 0..d {
            let si = nw[i] - w[i];
            ss += si * si;
            sy += si * (ngw[i] - gw[i]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(base_step, 1e6 * base_step) } else { base_step };
        (w, b, loss, gw, gb) = (nw, nb, nloss, ngw, ngb);
        if change < LR_TOLERANCE {
            break;
        }
    }
    LogisticRegression { weights: w, bias: b, iterations }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LinkPredictor {
    Cosine,
    Logistic(LogisticRegression),
}

impl LinkPredictor {
    pub fn name(&self) -> &'static str {
        match self {
            LinkPredictor::Cosine => "cs",
            LinkPredictor::Logistic(_) => "lr",
        }
    }

    /// Scores pairs against a |V|×d matrix of focus embeddings.
    pub fn score(&self, emb: &Matrix, pair: Pair) -> Result<f64> {
        match self {
            LinkPredictor::Cosine => cs_from_rows(emb, pair),
            LinkPredictor::Logistic(lr) => Ok(lr.predict(&hadamard(emb, pair))),
        }
    }

    pub fn score_all(&self, emb: &Matrix, pairs: &[Pair], exec: Exec) -> Result<Vec<f64>> {
        exec.map_slice(pairs, |&p| self.score(emb, p)).into_iter().collect()
    }
}

/// Fits the logistic predictor on Hadamard features of focus embeddings.
/// Pairs are canonicalized and sorted first, so input order is irrelevant.
pub fn lr_train(emb: &Matrix, positives: &[Pair], negatives: &[Pair]) -> Result<LinkPredictor> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidConfig(vec!["logistic regression needs positive and negative pairs".into()]));
    }
    let sorted = |pairs: &[Pair]| {
        let mut v: Vec<Pair> = pairs.iter().map(|&(a, b)| canonical(a, b)).collect();
        v.sort_unstable();
        v
    };
    let (pos, neg) = (sorted(positives), sorted(negatives));
    let xs: Vec<Vec<f64>> = pos.iter().chain(&neg).map(|&p| hadamard(emb, p)).collect();
    let ys: Vec<f64> = pos.iter().map(|_| 1.0).chain(neg.iter().map(|_| 0.0)).collect();
    Ok(LinkPredictor::Logistic(fit_logistic(&xs, &ys, LR_L2)))
}

/// Mann–Whitney AUC with half credit for ties.
pub fn auc(pos_scores: &[f64], neg_scores: &[f64]) -> Result<f64> {
    if pos_scores.is_empty() || neg_scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut all: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based mid-rank of the tie group
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos_scores.len() as f64, neg_scores.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucEntry {
    pub encoder: String,
    pub predictor: String,
    pub strategy: String,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset_fingerprint: String,
    pub split_seed: u64,
    pub fraction: f64,
    pub test_positives: usize,
    pub test_negatives: usize,
    pub lr_train_pairs: usize,
    pub results: Vec<AucEntry>,
}

impl EvalReport {
    pub fn auc(&self, predictor: &str) -> Option<f64> {
        self.results.iter().find(|e| e.predictor == predictor).map(|e| e.auc)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }
}

/// CS and LR AUC of `model` on the split's test pairs.
pub fn evaluate(model: &EncoderModel, split: &EdgeSplit, exec: Exec) -> Result<EvalReport> {
    let inputs = model.inputs(&split.train_graph)?;
    let emb = model.embed_all(&inputs, Side::Focus, exec)?;
    let mut results = Vec::new();
    let lr = lr_train(&emb, &split.lr_train_positives, &split.lr_train_negatives)?;
    for predictor in [LinkPredictor::Cosine, lr] {
        let pos = predictor.score_all(&emb, &split.test_positives, exec)?;
        let neg = predictor.score_all(&emb, &split.test_negatives, exec)?;
        results.push(AucEntry {
            encoder: model.kind.name().into(),
            predictor: predictor.name().into(),
            strategy: split.strategy.name().into(),
            auc: auc(&pos, &neg)?,
        });
    }
    Ok(EvalReport {
        dataset_fingerprint: split.fingerprint(),
        split_seed: split.seed,
        fraction: split.fraction,
        test_positives: split.test_positives.len(),
        test_negatives: split.test_negatives.len(),
        lr_train_pairs: split.lr_train_positives.len() + split.lr_train_negatives.len(),
        results,
    })
}
