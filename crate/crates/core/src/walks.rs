//! Second-order (return / in-out biased) random walks and skip-gram pair
//! extraction.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{Graph, NodeId};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walks_per_node: usize,
    /// Walk length in nodes.
    pub walk_length: usize,
    /// Context window length in nodes, focus included.
    pub window: usize,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self { p: 1.0, q: 1.0, walks_per_node: 5, walk_length: 40, window: 10 }
    }
}

impl WalkConfig {
    /// Settings used for graphs of a few tens of thousands of nodes or fewer.
    pub fn small_graph() -> Self {
        Self { walks_per_node: 10, ..Self::default() }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.p > 0.0 && self.p.is_finite()) {
            out.push(format!("p must be positive (got {})", self.p));
        }
        if !(self.q > 0.0 && self.q.is_finite()) {
            out.push(format!("q must be positive (got {})", self.q));
        }
        if self.walks_per_node < 1 {
            out.push("walks_per_node must be at least 1".into());
        }
        if self.window < 2 {
            out.push(format!("window must be at least 2 (got {})", self.window));
        }
        if self.walk_length < self.window {
            out.push(format!(
                "walk_length ({}) must be at least window ({})",
                self.walk_length, self.window
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Unnormalized probability of stepping `cur → next` after arriving from `prev`.
pub fn second_order_weight(g: &Graph, prev: NodeId, cur: NodeId, next: NodeId, p: f64, q: f64) -> Result<f64> {
    if !g.has_edge(cur, next) {
        return Err(Error::NotNeighbor { cur: cur.index(), next: next.index() });
    }
    Ok(if next == prev {
        1.0 / p
    } else if g.has_edge(prev, next) {
        1.0
    } else {
        1.0 / q
    })
}

/// Vose alias table over `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let (prob, alias) = build_alias(weights);
        Self { prob, alias }
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        alias_draw(&self.prob, &self.alias, rng)
    }

    /// Distribution encoded by the table.
    pub fn probabilities(&self) -> Vec<f64> {
        alias_probabilities(&self.prob, &self.alias)
    }
}

fn build_alias(weights: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
    let mut alias: Vec<u32> = (0..n as u32).collect();
    let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| prob[i] < 1.0);
    while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
        alias[s] = l as u32;
        prob[l] -= 1.0 - prob[s];
        if prob[l] < 1.0 {
            large.pop();
            small.push(l);
        }
    }
    // leftovers are 1 up to rounding
    for i in small.into_iter().chain(large) {
        prob[i] = 1.0;
    }
    (prob, alias)
}

fn alias_draw<R: Rng + ?Sized>(prob: &[f64], alias: &[u32], rng: &mut R) -> usize {
    let i = rng.random_range(0..prob.len());
    if rng.random::<f64>() < prob[i] {
        i
    } else {
        alias[i] as usize
    }
}

fn alias_probabilities(prob: &[f64], alias: &[u32]) -> Vec<f64> {
    let n = prob.len() as f64;
    let mut out: Vec<f64> = prob.iter().map(|p| p / n).collect();
    for (i, &a) in alias.iter().enumerate() {
        if a as usize != i {
            out[a as usize] += (1.0 - prob[i]) / n;
        }
    }
    out
}

/// One alias table per directed edge `(prev, cur)`, sampling over `adj(cur)`.
#[derive(Debug, Clone)]
pub struct TransitionTables {
    /// Start of each node's outgoing directed edges (CSR over adjacency).
    node_offsets: Vec<usize>,
    /// Start of each directed edge's table in `prob` / `alias`.
    table_offsets: Vec<usize>,
    prob: Vec<f64>,
    alias: Vec<u32>,
}

impl TransitionTables {
    fn edge_index(&self, g: &Graph, prev: NodeId, cur: NodeId) -> Option<usize> {
        g.neighbors(prev).binary_search(&cur).ok().map(|j| self.node_offsets[prev.index()] + j)
    }

    fn table(&self, e: usize) -> (&[f64], &[u32]) {
        let range = self.table_offsets[e]..self.table_offsets[e + 1];
        (&self.prob[range.clone()], &self.alias[range])
    }

    /// Normalized next-step distribution over `adj(cur)` after `prev → cur`.
    pub fn transition_probabilities(&self, g: &Graph, prev: NodeId, cur: NodeId) -> Result<Vec<f64>> {
        let e = self
            .edge_index(g, prev, cur)
            .ok_or(Error::NotNeighbor { cur: prev.index(), next: cur.index() })?;
        let (prob, alias) = self.table(e);
        Ok(alias_probabilities(prob, alias))
    }

    fn sample_next<R: Rng + ?Sized>(&self, g: &Graph, prev: NodeId, cur: NodeId, rng: &mut R) -> NodeId {
        let e = self.edge_index(g, prev, cur).expect("walk followed a non-edge");
        let (prob, alias) = self.table(e);
        g.neighbors(cur)[alias_draw(prob, alias, rng)]
    }
}

pub fn build_alias_tables(g: &Graph, cfg: &WalkConfig, exec: Exec) -> Result<TransitionTables> {
    cfg.validate()?;
    if let Some(v) = g.nodes().find(|&v| g.degree(v) == 0) {
        return Err(Error::IsolatedNode(g.key(v).to_owned()));
    }
    let per_node: Vec<(Vec<f64>, Vec<u32>, Vec<usize>)> = exec.map_range(g.node_count(), |i| {
        let prev = NodeId::from(i);
        let mut prob = Vec::new();
        let mut alias = Vec::new();
        let mut lens = Vec::with_capacity(g.degree(prev));
        for &cur in g.neighbors(prev) {
            let weights: Vec<f64> = g
                .neighbors(cur)
                .iter()
                .map(|&next| second_order_weight(g, prev, cur, next, cfg.p, cfg.q).expect("neighbor by construction"))
                .collect();
            let (p, a) = build_alias(&weights);
            lens.push(p.len());
            prob.extend(p);
            alias.extend(a);
        }
        (prob, alias, lens)
    });

    let mut node_offsets = Vec::with_capacity(g.node_count() + 1);
    let mut table_offsets = vec![0];
    let mut prob = Vec::new();
    let mut alias = Vec::new();
    let mut edges = 0;
    for (p, a, lens) in per_node {
        node_offsets.push(edges);
        edges += lens.len();
        for len in lens {
            table_offsets.push(table_offsets.last().unwrap() + len);
        }
        prob.extend(p);
        alias.extend(a);
    }
    node_offsets.push(edges);
    Ok(TransitionTables { node_offsets, table_offsets, prob, alias })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Walk {
    pub nodes: Vec<NodeId>,
}

impl Walk {
    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }
}

/// `walks_per_node` walks from every node, grouped by start node. Each start
/// node draws from its own RNG stream, so the output does not depend on the
/// execution policy.
pub fn generate_walks(g: &Graph, tables: &TransitionTables, cfg: &WalkConfig, seed: u64, exec: Exec) -> Vec<Walk> {
    let per_node = exec.map_range(g.node_count(), |i| {
        let start = NodeId::from(i);
        let mut rng = seeding::rng(seed, seeding::WALKS | start.0 as u64);
        (0..cfg.walks_per_node)
            .map(|_| {
                let mut nodes = Vec::with_capacity(cfg.walk_length);
                nodes.push(start);
                if cfg.walk_length > 1 {
                    let nbrs = g.neighbors(start);
                    nodes.push(nbrs[rng.random_range(0..nbrs.len())]);
                }
                while nodes.len() < cfg.walk_length {
                    let (prev, cur) = (nodes[nodes.len() - 2], nodes[nodes.len() - 1]);
                    nodes.push(tables.sample_next(g, prev, cur, &mut rng));
                }
                Walk { nodes }
            })
            .collect::<Vec<_>>()
    });
    per_node.into_iter().flatten().collect()
}

/// Number of (focus, context) pairs one walk of `len` nodes yields.
pub fn pairs_per_walk(len: usize, window: usize) -> usize {
    (0..len).map(|t| (window - 1).min(len - 1 - t)).sum()
}

/// `(nodes[t], nodes[t + j])` for every position `t` and `1 <= j < window`.
pub fn extract_pairs(walks: &[Walk], window: usize) -> Vec<(NodeId, NodeId)> {
    let total = walks.iter().map(|w| pairs_per_walk(w.nodes.len(), window)).sum();
    let mut out = Vec::with_capacity(total);
    for walk in walks {
        let nodes = &walk.nodes;
        for (t, &focus) in nodes.iter().enumerate() {
            for &ctx in nodes.iter().skip(t + 1).take(window - 1) {
                out.push((focus, ctx));
            }
        }
    }
    out
}

/// One walk per line as space-separated node keys.
pub fn write_walks<W: Write>(g: &Graph, walks: &[Walk], mut w: W) -> Result<()> {
    for walk in walks {
        let line: Vec<&str> = walk.nodes.iter().map(|&v| g.key(v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}
