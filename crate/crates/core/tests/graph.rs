use std::collections::HashSet;

use proptest::prelude::*;
use textwalk::fixtures::{generate, FixtureSpec};
use textwalk::graph::{canonical, read_descriptors, read_edges, Graph, NodeId};

fn keyed(_n: usize, edges: &[(usize, usize)]) -> Graph {
    let pairs: Vec<(String, String)> = edges.iter().map(|&(a, b)| (format!("n{a}"), format!("n{b}"))).collect();
    Graph::from_edges(&pairs, |k| Some(format!("word {k}"))).unwrap()
}

/// All-pairs shortest paths by Floyd–Warshall over the undirected adjacency.
fn floyd_warshall(g: &Graph) -> Vec<Vec<Option<usize>>> {
    let n = g.node_count();
    let mut d = vec![vec![None; n]; n];
    for v in 0..n {
        d[v][v] = Some(0);
        for &w in g.neighbors(NodeId::from(v)) {
            d[v][w.index()] = Some(1);
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

fn random_edges() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..50).prop_flat_map(|n| {
        let edge = (0..n, 0..n).prop_filter("no self loops", |(a, b)| a != b);
        (Just(n), prop::collection::vec(edge, 1..(3 * n)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hop_distance_matches_floyd_warshall((n, edges) in random_edges()) {
        let g = keyed(n, &edges);
        let oracle = floyd_warshall(&g);
        for a in g.nodes() {
            for b in g.nodes() {
                prop_assert_eq!(g.hop_distance(a, b, usize::MAX), oracle[a.index()][b.index()]);
                let capped = oracle[a.index()][b.index()].filter(|&d| d <= 3);
                prop_assert_eq!(g.hop_distance(a, b, 3), capped);
            }
        }
    }

    #[test]
    fn hop_distance_is_a_metric((n, edges) in random_edges()) {
        let g = keyed(n, &edges);
        let m = g.node_count();
        let d: Vec<Vec<usize>> = g.nodes().map(|v| g.bfs_distances(v)).collect();
        for a in 0..m {
            for b in 0..m {
                prop_assert_eq!(d[a][b], d[b][a]);
                if d[a][b] == usize::MAX {
                    continue;
                }
                for c in 0..m {
                    if d[b][c] != usize::MAX {
                        prop_assert!(d[a][c] <= d[a][b] + d[b][c]);
                    }
                }
            }
        }
    }

    #[test]
    fn hierarchy_relatives_are_close((n, edges) in random_edges(), depth in 1usize..5) {
        let g = keyed(n, &edges);
        for a in g.nodes() {
            for b in g.nodes() {
                if g.is_hierarchy_relative(a, b, depth) {
                    prop_assert!(g.hop_distance(a, b, depth).is_some());
                }
            }
        }
    }

    #[test]
    fn graph_invariants_hold((n, edges) in random_edges()) {
        let g = keyed(n, &edges);
        let mut seen = HashSet::new();
        for (c, p) in g.hierarchy_edges().iter().copied() {
            prop_assert!(c != p);
            prop_assert!(seen.insert(canonical(c, p)));
            prop_assert!(g.neighbors(c).contains(&p) && g.neighbors(p).contains(&c));
        }
        let distinct: HashSet<_> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
        prop_assert_eq!(g.edge_count(), distinct.len());
        prop_assert_eq!(g.duplicate_edges(), edges.len() - distinct.len());
        for v in g.nodes() {
            prop_assert!(!g.descriptor(v).is_empty());
            prop_assert!(g.descriptor(v).iter().all(|&w| (w as usize) < g.vocabulary().len()));
        }
    }

    #[test]
    fn serialize_reload_is_idempotent((n, edges) in random_edges()) {
        let g = keyed(n, &edges);
        let (mut e, mut d) = (Vec::new(), Vec::new());
        g.write_edges(&mut e).unwrap();
        g.write_descriptors(&mut d).unwrap();
        let texts = read_descriptors(&d[..]).unwrap();
        let reloaded = Graph::from_edges(&read_edges(&e[..]).unwrap(), |k| texts.get(k).cloned()).unwrap();
        prop_assert_eq!(reloaded.keys(), g.keys());
        for v in g.nodes() {
            prop_assert_eq!(reloaded.neighbors(v), g.neighbors(v));
            prop_assert_eq!(reloaded.parents(v), g.parents(v));
            prop_assert_eq!(reloaded.text(v), g.text(v));
        }
    }
}

fn fixture_200() -> textwalk::fixtures::Fixture {
    generate(&FixtureSpec {
        base_concepts: 20,
        modifiers: vec!["acute".into(), "chronic".into(), "left".into()],
        depth: 3,
        branching: None,
        cross_links: 30,
        seed: 4,
    })
    .unwrap()
}

#[test]
fn loaded_fixture_matches_manifest() {
    let fixture = fixture_200();
    let dir = tempfile::tempdir().unwrap();
    let (ep, dp) = (dir.path().join("edges.tsv"), dir.path().join("descriptors.tsv"));
    fixture.write_edges(std::fs::File::create(&ep).unwrap()).unwrap();
    fixture.write_descriptors(std::fs::File::create(&dp).unwrap()).unwrap();
    let g = textwalk::load_graph(&ep, &dp).unwrap();
    assert_eq!(g.node_count(), 200);
    assert_eq!(g.node_count(), fixture.manifest.node_count);
    assert_eq!(g.edge_count(), fixture.manifest.edge_count);
    assert_eq!(g.edge_count(), fixture.manifest.hierarchy_edges + fixture.manifest.cross_links);
    assert!(g.is_connected());
}

#[test]
fn removing_a_known_bridge_disconnects() {
    let fixture = fixture_200();
    let g = fixture.graph().unwrap();
    assert!(!fixture.manifest.bridges.is_empty());
    let [child, parent] = &fixture.manifest.bridges[0];
    let pair = canonical(g.node(child).unwrap(), g.node(parent).unwrap());
    assert!(g.has_edge(pair.0, pair.1));
    assert!(!g.without_edges(&HashSet::from([pair])).is_connected());
    let non_bridge = g.edges().find(|&(a, b)| {
        !fixture.manifest.bridges.iter().any(|[c, p]| canonical(g.node(c).unwrap(), g.node(p).unwrap()) == (a, b))
    });
    let pair = non_bridge.expect("cross links create cycles");
    assert!(g.without_edges(&HashSet::from([pair])).is_connected());
}
