use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use textwalk::analysis::{importance_scores, nearest_neighbors, similarity_case, write_neighbors_csv};
use textwalk::encoders::{encode_bigru_max_res, EncoderKind, EncoderModel, Side};
use textwalk::evaluation::split_edges;
use textwalk::fixtures::{generate, FixtureSpec};
use textwalk::graph::{Graph, NodeId};
use textwalk::tensor::dot;
use textwalk::Exec;

fn fixture() -> Graph {
    generate(&FixtureSpec {
        base_concepts: 15,
        modifiers: ["acute", "chronic", "left", "right"].iter().map(|s| s.to_string()).collect(),
        depth: 4,
        branching: None,
        cross_links: 120,
        seed: 8,
    })
    .unwrap()
    .graph()
    .unwrap()
}

#[test]
fn nearest_neighbors_match_brute_force_scan() {
    let g = fixture();
    assert!(g.node_count() <= 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [EncoderKind::Lookup, EncoderKind::Avg, EncoderKind::BiGruMaxRes] {
        let model = EncoderModel::for_graph(kind, 12, &g, &mut rng);
        let inputs = model.inputs(&g).unwrap();
        let embs: Vec<Vec<f64>> = g.nodes().map(|v| model.node_embedding(&inputs, v, Side::Focus).unwrap()).collect();
        for target in [NodeId(0), NodeId(17), NodeId(g.node_count() as u32 - 1)] {
            let t = &embs[target.index()];
            let mut oracle: Vec<(f64, u32)> = (0..g.node_count())
                .filter(|&i| i != target.index())
                .map(|i| {
                    let e = &embs[i];
                    (dot(t, e) / (dot(t, t).sqrt() * dot(e, e).sqrt()), i as u32)
                })
                .collect();
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let got = nearest_neighbors(&model, &inputs, &g, target, 10, Exec::Parallel).unwrap();
            let ids: Vec<u32> = got.neighbors.iter().map(|n| n.node.0).collect();
            let expected: Vec<u32> = oracle[..10].iter().map(|x| x.1).collect();
            assert_eq!(ids, expected, "{kind:?}");
            for (n, (c, _)) in got.neighbors.iter().zip(&oracle) {
                assert!((n.cosine - c).abs() < 1e-12);
                assert_eq!(n.hops, g.hop_distance(target, n.node, usize::MAX));
            }
            assert!(got.neighbors.windows(2).all(|w| w[0].cosine >= w[1].cosine));
        }
    }
    let model = EncoderModel::for_graph(EncoderKind::Avg, 4, &g, &mut rng);
    let inputs = model.inputs(&g).unwrap();
    let all = nearest_neighbors(&model, &inputs, &g, NodeId(3), 1_000_000, Exec::Sequential).unwrap();
    assert_eq!(all.neighbors.len(), g.node_count() - 1);
    assert!(all.neighbors.iter().all(|n| n.node != NodeId(3)));
}

#[test]
fn neighbor_table_has_name_cos_and_hops() {
    let g = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = EncoderModel::for_graph(EncoderKind::Avg, 8, &g, &mut rng);
    let inputs = model.inputs(&g).unwrap();
    let res = nearest_neighbors(&model, &inputs, &g, NodeId(5), 5, Exec::Sequential).unwrap();
    let mut out = Vec::new();
    write_neighbors_csv(&g, &res, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,key,descriptor,cos,cos_pct,hops");
    assert_eq!(lines.len(), 6);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn importance_recount_from_argmax() {
    let g = fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = EncoderModel::for_graph(EncoderKind::BiGruMaxRes, 10, &g, &mut rng);
    let inputs = model.inputs(&g).unwrap();
    let mut checked = 0;
    for v in g.nodes() {
        let tokens = inputs.get(v);
        let row = importance_scores(&model, &inputs, v).unwrap();
        assert_eq!(row.scores.len(), tokens.len());
        let mut normalized = Vec::new();
        for (s, side) in [model.focus.clone(), model.context.clone()].iter().zip(0..) {
            let (_, argmax) =
                encode_bigru_max_res(tokens, &s.table, s.fwd.as_ref().unwrap(), s.bwd.as_ref().unwrap()).unwrap();
            let mut wins = vec![0usize; tokens.len()];
            for t in argmax {
                wins[t] += 1;
            }
            assert_eq!(row.wins[side], wins);
            assert_eq!(wins.iter().sum::<usize>(), 10);
            let max = *wins.iter().max().unwrap() as f64;
            normalized.push(wins.iter().map(|&c| c as f64 / max).collect::<Vec<_>>());
        }
        for (i, s) in row.scores.iter().enumerate() {
            assert!((s - (normalized[0][i] + normalized[1][i]) / 2.0).abs() < 1e-15);
            assert!((0.0..=1.0).contains(s));
        }
        if tokens.len() == 1 {
            assert_eq!(row.scores, vec![1.0]);
        }
        if tokens.len() == 3 {
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn case_rows_across_removed_edges() {
    let g = fixture();
    let split = split_edges(&g, 0.1, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = EncoderModel::for_graph(EncoderKind::Gru, 6, &split.train_graph, &mut rng);
    let inputs = model.inputs(&split.train_graph).unwrap();
    let mut pairs = split.test_positives.clone();
    pairs.push((NodeId(9), NodeId(9)));
    let rows = similarity_case(&model, &inputs, &split.train_graph, &pairs).unwrap();
    for r in &rows[..rows.len() - 1] {
        assert!(r.hops.unwrap() >= 2);
        assert!((-1.0..=1.0).contains(&r.cosine));
    }
    let last = rows.last().unwrap();
    assert_eq!(last.hops, Some(0));
    assert!((last.cosine - 1.0).abs() < 1e-12);
    let removed: HashSet<_> = split.test_positives.iter().collect();
    assert_eq!(removed.len(), split.test_positives.len());
}
