use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textwalk::fixtures::{generate, FixtureSpec};
use textwalk::trainer::batch_gradients;
use textwalk::walks::{build_alias_tables, generate_walks, extract_pairs};
use textwalk::{EncoderKind, EncoderModel, Exec, Graph, Side, WalkConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn fixture() -> Graph {
    generate(&FixtureSpec::default()).unwrap().graph().unwrap()
}

fn walks(c: &mut Criterion) {
    let g = fixture();
    let cfg = WalkConfig { walks_per_node: 2, walk_length: 40, p: 0.5, q: 2.0, ..WalkConfig::default() };
    let mut group = c.benchmark_group("walks");
    for (name, exec) in MODES {
        let tables = build_alias_tables(&g, &cfg, exec).unwrap();
        group.bench_function(BenchmarkId::new("alias_tables", name), |b| {
            b.iter(|| build_alias_tables(&g, &cfg, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("generate", name), |b| b.iter(|| generate_walks(&g, &tables, &cfg, 0, exec)));
    }
    group.finish();
}

fn encoders(c: &mut Criterion) {
    let g = fixture();
    let mut group = c.benchmark_group("embed_all");
    group.sample_size(10);
    for kind in [EncoderKind::Avg, EncoderKind::BiGruMaxRes] {
        let model = EncoderModel::for_graph(kind, 30, &g, &mut ChaCha8Rng::seed_from_u64(0));
        let inputs = model.inputs(&g).unwrap();
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(kind.name(), name), |b| {
                b.iter(|| model.embed_all(&inputs, Side::Focus, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let g = fixture();
    let cfg = WalkConfig { walks_per_node: 1, walk_length: 20, window: 5, ..WalkConfig::default() };
    let tables = build_alias_tables(&g, &cfg, Exec::Sequential).unwrap();
    let pairs = extract_pairs(&generate_walks(&g, &tables, &cfg, 0, Exec::Sequential), cfg.window);
    let batch = &pairs[..128];
    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for kind in [EncoderKind::Gru, EncoderKind::BiGruMaxRes] {
        let model = EncoderModel::for_graph(kind, 30, &g, &mut ChaCha8Rng::seed_from_u64(0));
        let inputs = model.inputs(&g).unwrap();
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(kind.name(), name), |b| {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                b.iter(|| batch_gradients(&model, &inputs, batch, 2, &mut rng, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, walks, encoders, gradients);
criterion_main!(benches);
