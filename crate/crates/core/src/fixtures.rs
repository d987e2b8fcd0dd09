//! Deterministic synthetic hierarchies with compositional descriptors.
//!
//! Level-0 concepts get a fresh lexeme (half of them as `<head> of <lexeme>`).
//! Every node below the last level gets child slots for modifiers not yet
//! used on its path: all of them, or a random `branching` of them. Four in
//! five slots become compositional children whose descriptor is the modifier
//! followed by the parent's descriptor; the rest get a fresh single-lexeme
//! descriptor. The remaining base concepts are attached under the first one so
//! the hierarchy is a single tree. Cross links then add a second parent one
//! level up, preferring the same base tree, which makes exactly `cross_links`
//! edges removable without disconnecting the graph.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seeding;

pub const DEFAULT_MODIFIERS: [&str; 8] =
    ["acute", "chronic", "recurrent", "primary", "secondary", "left", "right", "lower"];

const HEADS: [&str; 8] = ["zone", "wall", "cavity", "layer", "head", "surface", "margin", "body"];
const ONSETS: [&str; 14] = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "x", "l"];

/// One compositional slot in this many is given a fresh lexeme instead.
const FRESH_EVERY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub base_concepts: usize,
    pub modifiers: Vec<String>,
    pub depth: usize,
    /// Children per node, drawn from the modifiers its descriptor does not
    /// carry yet. `None` gives every unused modifier a child.
    #[serde(default)]
    pub branching: Option<usize>,
    pub cross_links: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            base_concepts: 17,
            modifiers: DEFAULT_MODIFIERS.iter().map(|s| s.to_string()).collect(),
            depth: 5,
            branching: Some(3),
            cross_links: 600,
            seed: 0,
        }
    }
}

impl FixtureSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.depth < 2 {
            out.push(format!("depth must be at least 2 (got {})", self.depth));
        }
        if self.base_concepts < 10 {
            out.push(format!("base_concepts must be at least 10 (got {})", self.base_concepts));
        }
        if self.branching == Some(0) {
            out.push("branching must be at least 1".into());
        }
        if self.modifiers.len() + 1 < self.depth {
            out.push(format!(
                "{} modifiers cannot fill {} levels (need at least depth - 1)",
                self.modifiers.len(),
                self.depth
            ));
        }
        let distinct: HashSet<&String> = self.modifiers.iter().collect();
        if distinct.len() != self.modifiers.len() {
            out.push("modifiers must be distinct".into());
        }
        for m in &self.modifiers {
            if crate::graph::tokenize(m).map(|t| t.len() != 1 || &t[0] != m).unwrap_or(true) {
                out.push(format!("modifier `{m}` must be a single lowercase token"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub seed: u64,
    pub base_concepts: usize,
    pub depth: usize,
    pub modifiers: Vec<String>,
    pub node_count: usize,
    pub edge_count: usize,
    pub hierarchy_edges: usize,
    pub compositional_edges: usize,
    pub noncompositional_edges: usize,
    pub cross_links: usize,
    pub compositional_ratio: String,
    pub lexeme_pool_size: usize,
    /// Bridge edges as `[child, parent]` keys.
    pub bridges: Vec<[String; 2]>,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    /// `(child, parent)` keys: hierarchy edges first, then cross links.
    pub edges: Vec<(String, String)>,
    /// `(key, descriptor)` in node order.
    pub descriptors: Vec<(String, String)>,
    /// Level of each node in `descriptors` order.
    pub levels: Vec<usize>,
    pub manifest: FixtureManifest,
}

struct Node {
    tokens: Vec<String>,
    level: usize,
    tree: usize,
    used: Vec<bool>,
}

struct Lexicon {
    taken: HashSet<String>,
    issued: usize,
}

impl Lexicon {
    fn fresh<R: Rng + ?Sized>(&mut self, rng: &mut R) -> String {
        loop {
            let syllables = rng.random_range(2..=3);
            let mut word = String::new();
            for _ in 0..syllables {
                word.push_str(ONSETS.choose(rng).expect("non-empty"));
                word.push_str(VOWELS.choose(rng).expect("non-empty"));
            }
            word.push_str(CODAS.choose(rng).expect("non-empty"));
            if self.taken.insert(word.clone()) {
                self.issued += 1;
                return word;
            }
        }
    }
}

pub fn generate(spec: &FixtureSpec) -> Result<Fixture> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }
    let mut rng = seeding::rng(spec.seed, seeding::INIT);
    let mut lexicon = Lexicon {
        taken: spec.modifiers.iter().cloned().chain(HEADS.iter().map(|s| s.to_string())).chain(["of".into()]).collect(),
        issued: 0,
    };

    let mut nodes: Vec<Node> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let (mut compositional, mut noncompositional) = (0, 0);
    for tree in 0..spec.base_concepts {
        let lexeme = lexicon.fresh(&mut rng);
        let tokens = if rng.random_bool(0.5) {
            vec![HEADS.choose(&mut rng).expect("non-empty").to_string(), "of".into(), lexeme]
        } else {
            vec![lexeme]
        };
        nodes.push(Node { tokens, level: 0, tree, used: vec![false; spec.modifiers.len()] });
    }
    let mut level_start = 0;
    for level in 1..spec.depth {
        let level_end = nodes.len();
        let mut slots: Vec<(usize, usize)> = Vec::new();
        for (parent, node) in nodes.iter().enumerate().take(level_end).skip(level_start) {
            let mut unused: Vec<usize> = (0..spec.modifiers.len()).filter(|&m| !node.used[m]).collect();
            if let Some(b) = spec.branching {
                unused.shuffle(&mut rng);
                unused.truncate(b);
                unused.sort_unstable();
            }
            slots.extend(unused.into_iter().map(|m| (parent, m)));
        }
        let mut order: Vec<usize> = (0..slots.len()).collect();
        order.shuffle(&mut rng);
        let fresh: HashSet<usize> = order.into_iter().take((slots.len() + FRESH_EVERY / 2) / FRESH_EVERY).collect();
        for (i, (parent, m)) in slots.into_iter().enumerate() {
            let mut used = nodes[parent].used.clone();
            used[m] = true;
            let tokens = if fresh.contains(&i) {
                noncompositional += 1;
                vec![lexicon.fresh(&mut rng)]
            } else {
                compositional += 1;
                std::iter::once(spec.modifiers[m].clone()).chain(nodes[parent].tokens.iter().cloned()).collect()
            };
            let tree = nodes[parent].tree;
            nodes.push(Node { tokens, level, tree, used });
            edges.push((nodes.len() - 1, parent));
        }
        level_start = level_end;
    }
    // Later base concepts hang off the first one so the hierarchy alone is
    // connected and every cross link stays removable.
    for base in 1..spec.base_concepts {
        edges.push((base, 0));
    }
    let hierarchy_edges = edges.len();

    let mut by_level: Vec<Vec<usize>> = vec![Vec::new(); spec.depth];
    for (i, n) in nodes.iter().enumerate() {
        by_level[n.level].push(i);
    }
    let mut linked: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let lower: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].level > 0).collect();
    let mut added = 0;
    let mut attempts = 0;
    while added < spec.cross_links && attempts < 100 * spec.cross_links.max(1) {
        attempts += 1;
        let &v = lower.choose(&mut rng).expect("depth >= 2");
        let up = &by_level[nodes[v].level - 1];
        let free = |&&p: &&usize| !linked.contains(&(v, p));
        let same_tree: Vec<usize> = up.iter().filter(|&&p| nodes[p].tree == nodes[v].tree).filter(free).copied().collect();
        let pool: Vec<usize> =
            if same_tree.is_empty() { up.iter().filter(free).copied().collect() } else { same_tree };
        if let Some(&p) = pool.choose(&mut rng) {
            linked.insert((v, p));
            edges.push((v, p));
            added += 1;
        }
    }

    let keys: Vec<String> = (0..nodes.len()).map(|i| format!("C{i:06}")).collect();
    let descriptors: Vec<(String, String)> =
        keys.iter().zip(&nodes).map(|(k, n)| (k.clone(), n.tokens.join(" "))).collect();
    let key_edges: Vec<(String, String)> = edges.iter().map(|&(c, p)| (keys[c].clone(), keys[p].clone())).collect();

    let graph = Graph::from_edges(&key_edges, |k| {
        k[1..].parse::<usize>().ok().and_then(|i| descriptors.get(i)).map(|(_, t)| t.clone())
    })?;
    let bridges = graph
        .bridges()
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = (graph.key(a).to_owned(), graph.key(b).to_owned());
            if linked.contains(&(a[1..].parse().unwrap(), b[1..].parse().unwrap())) {
                [a, b]
            } else {
                [b, a]
            }
        })
        .collect();

    let manifest = FixtureManifest {
        seed: spec.seed,
        base_concepts: spec.base_concepts,
        depth: spec.depth,
        modifiers: spec.modifiers.clone(),
        node_count: graph.node_count(),
        edge_count: graph.edge_count(),
        hierarchy_edges,
        compositional_edges: compositional,
        noncompositional_edges: noncompositional,
        cross_links: added,
        compositional_ratio: format!("{}:1", FRESH_EVERY - 1),
        lexeme_pool_size: lexicon.issued,
        bridges,
    };
    Ok(Fixture { edges: key_edges, descriptors, levels: nodes.iter().map(|n| n.level).collect(), manifest })
}

impl Fixture {
    pub fn graph(&self) -> Result<Graph> {
        Graph::from_edges(&self.edges, |k| {
            k[1..].parse::<usize>().ok().and_then(|i| self.descriptors.get(i)).map(|(_, t)| t.clone())
        })
    }

    pub fn write_edges<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# child\tparent")?;
        for (c, p) in &self.edges {
            writeln!(w, "{c}\t{p}")?;
        }
        Ok(())
    }

    pub fn write_descriptors<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, t) in &self.descriptors {
            writeln!(w, "{k}\t{t}")?;
        }
        Ok(())
    }

    pub fn manifest_toml(&self) -> String {
        let mut out = String::from("# textwalk synthetic fixture manifest\n");
        let _ = write!(out, "{}", toml::to_string(&self.manifest).expect("manifest serializes"));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(base: usize, mods: &[&str], depth: usize, cross: usize) -> FixtureSpec {
        FixtureSpec {
            base_concepts: base,
            modifiers: mods.iter().map(|s| s.to_string()).collect(),
            depth,
            branching: None,
            cross_links: cross,
            seed: 11,
        }
    }

    #[test]
    fn small_fixture_shape() {
        let f = generate(&spec(10, &["acute"], 2, 5)).unwrap();
        let m = &f.manifest;
        assert_eq!(m.node_count, 20);
        assert_eq!(m.hierarchy_edges, 19);
        assert_eq!(m.cross_links, 5);
        assert_eq!(m.edge_count, m.hierarchy_edges + 5);
        assert_eq!((m.compositional_edges, m.noncompositional_edges), (8, 2));
        let g = f.graph().unwrap();
        assert!(g.is_connected());
        for &(c, p) in &g.hierarchy_edges()[..10] {
            let (cw, pw) = (g.descriptor_words(c), g.descriptor_words(p));
            if cw[0] == "acute" {
                assert_eq!(cw[1..], pw[..]);
            } else {
                assert_eq!(cw.len(), 1);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let s = FixtureSpec { base_concepts: 12, cross_links: 30, ..Default::default() };
        let (a, b) = (generate(&s).unwrap(), generate(&s).unwrap());
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.descriptors, b.descriptors);
        assert_eq!(a.manifest_toml(), b.manifest_toml());
        let c = generate(&FixtureSpec { seed: 1, ..s }).unwrap();
        assert_ne!(a.descriptors, c.descriptors);
    }

    #[test]
    fn four_to_one_composition() {
        let f = generate(&FixtureSpec { base_concepts: 20, ..Default::default() }).unwrap();
        let m = &f.manifest;
        let total = m.compositional_edges + m.noncompositional_edges;
        assert_eq!(total + m.base_concepts - 1, m.hierarchy_edges);
        assert!((m.noncompositional_edges as f64 / total as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn branching_limits_children() {
        let f = generate(&FixtureSpec::default()).unwrap();
        assert_eq!(f.manifest.node_count, 17 * (1 + 3 + 9 + 27 + 81));
        let mut children = vec![0usize; f.levels.len()];
        let index = |k: &str| k[1..].parse::<usize>().unwrap();
        for (c, p) in &f.edges[..f.manifest.hierarchy_edges] {
            if f.levels[index(c)] > 0 {
                children[index(p)] += 1;
            }
        }
        for (v, &level) in f.levels.iter().enumerate() {
            assert_eq!(children[v], if level + 1 < 5 { 3 } else { 0 });
        }
        let narrow = FixtureSpec { base_concepts: 10, depth: 3, branching: Some(1), cross_links: 0, ..Default::default() };
        assert_eq!(generate(&narrow).unwrap().manifest.node_count, 30);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(generate(&spec(5, &["acute"], 1, 0)), Err(Error::InvalidConfig(p)) if p.len() == 2));
        assert!(generate(&spec(10, &["acute"], 3, 0)).is_err());
        assert!(generate(&spec(10, &["Acute Two"], 2, 0)).is_err());
    }
}
