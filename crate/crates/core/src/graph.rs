//! Text-attributed network: undirected adjacency for walks, retained
//! child→parent direction for hierarchy queries, and tokenized descriptors.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(u32::try_from(i).expect("node index exceeds u32"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Unordered node pair with `a <= b`.
pub fn canonical(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Lowercase, split on whitespace, strip punctuation from token edges.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(Error::DescriptorEmpty);
    }
    Ok(tokens)
}

/// Bijection between word strings and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut vocab = Self::new();
        for w in words {
            if vocab.index.contains_key(&w) {
                return Err(Error::ModelFormat(format!("duplicate vocabulary entry `{w}`")));
            }
            vocab.insert(&w);
        }
        Ok(vocab)
    }

    pub fn insert(&mut self, word: &str) -> u32 {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let i = self.words.len() as u32;
        self.words.push(word.to_owned());
        self.index.insert(word.to_owned(), i);
        i
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: u32) -> &str {
        &self.words[i as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Graph {
    keys: Vec<String>,
    key_index: HashMap<String, NodeId>,
    texts: Vec<String>,
    descriptors: Vec<Vec<u32>>,
    vocab: Vocabulary,
    adjacency: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
    children: Vec<Vec<NodeId>>,
    /// (child, parent) in input order, one per undirected edge.
    hierarchy: Vec<(NodeId, NodeId)>,
    duplicate_edges: usize,
}

impl Graph {
    /// Builds a graph from `(child, parent)` key pairs. Node ids follow the
    /// order of first appearance in `edges`.
    pub fn from_edges<S: AsRef<str>>(
        edges: &[(S, S)],
        descriptor_of: impl Fn(&str) -> Option<String>,
    ) -> Result<Self> {
        Self::with_node_order::<S>(&[], edges, descriptor_of)
    }

    /// Like [`Graph::from_edges`], but `order` fixes the ids of the listed
    /// keys first (duplicates are ignored).
    pub fn with_node_order<S: AsRef<str>>(
        order: &[S],
        edges: &[(S, S)],
        descriptor_of: impl Fn(&str) -> Option<String>,
    ) -> Result<Self> {
        let mut keys: Vec<String> = Vec::new();
        let mut key_index: HashMap<String, NodeId> = HashMap::new();
        for k in order {
            let k = k.as_ref();
            if !key_index.contains_key(k) {
                keys.push(k.to_owned());
                key_index.insert(k.to_owned(), NodeId::from(keys.len() - 1));
            }
        }
        let mut id_edges = Vec::with_capacity(edges.len());
        for (child, parent) in edges {
            let (child, parent) = (child.as_ref(), parent.as_ref());
            if child == parent {
                return Err(Error::SelfLoop(child.to_owned()));
            }
            let mut intern = |k: &str| {
                *key_index.entry(k.to_owned()).or_insert_with(|| {
                    keys.push(k.to_owned());
                    NodeId::from(keys.len() - 1)
                })
            };
            let c = intern(child);
            let p = intern(parent);
            id_edges.push((c, p));
        }
        let mut texts = Vec::with_capacity(keys.len());
        for k in &keys {
            let text = descriptor_of(k).ok_or_else(|| Error::MissingDescriptor(k.clone()))?;
            texts.push(text);
        }
        Self::assemble(keys, texts, &id_edges)
    }

    fn assemble(keys: Vec<String>, texts: Vec<String>, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        let n = keys.len();
        let mut vocab = Vocabulary::new();
        let mut descriptors = Vec::with_capacity(n);
        for text in &texts {
            let tokens = tokenize(text)?;
            descriptors.push(tokens.iter().map(|t| vocab.insert(t)).collect());
        }
        let key_index = keys.iter().enumerate().map(|(i, k)| (k.clone(), NodeId::from(i))).collect();

        let mut seen = HashSet::with_capacity(edges.len());
        let mut hierarchy = Vec::with_capacity(edges.len());
        let mut duplicate_edges = 0;
        let mut adjacency = vec![Vec::new(); n];
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for &(c, p) in edges {
            if c == p {
                return Err(Error::SelfLoop(keys[c.index()].clone()));
            }
            if !seen.insert(canonical(c, p)) {
                duplicate_edges += 1;
                continue;
            }
            hierarchy.push((c, p));
            adjacency[c.index()].push(p);
            adjacency[p.index()].push(c);
            parents[c.index()].push(p);
            children[p.index()].push(c);
        }
        for list in adjacency.iter_mut().chain(parents.iter_mut()).chain(children.iter_mut()) {
            list.sort_unstable();
        }
        if duplicate_edges > 0 {
            log::warn!("collapsed {duplicate_edges} duplicate edges");
        }
        Ok(Self {
            keys,
            key_index,
            texts,
            descriptors,
            vocab,
            adjacency,
            parents,
            children,
            hierarchy,
            duplicate_edges,
        })
    }

    /// Same nodes, ids and vocabulary, minus the given undirected edges.
    pub fn without_edges(&self, removed: &HashSet<(NodeId, NodeId)>) -> Self {
        let edges: Vec<_> = self
            .hierarchy
            .iter()
            .copied()
            .filter(|&(c, p)| !removed.contains(&canonical(c, p)))
            .collect();
        let mut g = Self::assemble(self.keys.clone(), self.texts.clone(), &edges)
            .expect("descriptors already validated");
        // keep word ids aligned with the source graph
        g.vocab = self.vocab.clone();
        g.descriptors = self.descriptors.clone();
        g
    }

    pub fn node_count(&self) -> usize {
        self.keys.len()
    }

    pub fn edge_count(&self) -> usize {
        self.hierarchy.len()
    }

    pub fn duplicate_edges(&self) -> usize {
        self.duplicate_edges
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = NodeId> {
        (0..self.keys.len()).map(NodeId::from)
    }

    pub fn key(&self, v: NodeId) -> &str {
        &self.keys[v.index()]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn node(&self, key: &str) -> Option<NodeId> {
        self.key_index.get(key).copied()
    }

    pub fn require_node(&self, key: &str) -> Result<NodeId> {
        self.node(key).ok_or_else(|| Error::UnknownNode(key.to_owned()))
    }

    pub fn text(&self, v: NodeId) -> &str {
        &self.texts[v.index()]
    }

    pub fn descriptor(&self, v: NodeId) -> &[u32] {
        &self.descriptors[v.index()]
    }

    pub fn descriptor_words(&self, v: NodeId) -> Vec<&str> {
        self.descriptor(v).iter().map(|&w| self.vocab.word(w)).collect()
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.index()]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v.index()].len()
    }

    pub fn parents(&self, v: NodeId) -> &[NodeId] {
        &self.parents[v.index()]
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v.index()]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a.index()].binary_search(&b).is_ok()
    }

    /// Directed `(child, parent)` edges in input order.
    pub fn hierarchy_edges(&self) -> &[(NodeId, NodeId)] {
        &self.hierarchy
    }

    /// Undirected edges as canonical pairs, in input order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.hierarchy.iter().map(|&(c, p)| canonical(c, p))
    }

    /// Shortest undirected path length, or `None` when longer than `cap`
    /// (or unreachable).
    pub fn hop_distance(&self, a: NodeId, b: NodeId, cap: usize) -> Option<usize> {
        if a == b {
            return Some(0);
        }
        let mut dist = HashMap::new();
        dist.insert(a, 0usize);
        let mut queue = VecDeque::from([a]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d >= cap {
                break;
            }
            for &w in self.neighbors(u) {
                if w == b {
                    return Some(d + 1);
                }
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        None
    }

    /// Undirected BFS distances from `src`; `usize::MAX` for unreachable nodes.
    pub fn bfs_distances(&self, src: NodeId) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count()];
        dist[src.index()] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()];
            for &w in self.neighbors(u) {
                if dist[w.index()] == usize::MAX {
                    dist[w.index()] = d + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.node_count() == 0 {
            return true;
        }
        self.bfs_distances(NodeId(0)).iter().all(|&d| d != usize::MAX)
    }

    /// Ancestors reachable by following parent links, with their shortest
    /// directed distance, up to `max_depth` steps. Excludes `v` itself.
    pub fn ancestors_within(&self, v: NodeId, max_depth: usize) -> Vec<(NodeId, usize)> {
        let mut dist = HashMap::new();
        dist.insert(v, 0usize);
        let mut out = Vec::new();
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == max_depth {
                continue;
            }
            for &p in self.parents(u) {
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(p) {
                    e.insert(d + 1);
                    out.push((p, d + 1));
                    queue.push_back(p);
                }
            }
        }
        out
    }

    fn reaches_upward(&self, from: NodeId, target: NodeId, max_depth: usize) -> bool {
        let mut visited = HashSet::from([from]);
        let mut frontier = vec![from];
        for _ in 0..max_depth {
            let mut next = Vec::new();
            for u in frontier {
                for &p in self.parents(u) {
                    if p == target {
                        return true;
                    }
                    if visited.insert(p) {
                        next.push(p);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        false
    }

    /// True iff one node is an ancestor of the other within `max_depth`
    /// directed hierarchy steps.
    pub fn is_hierarchy_relative(&self, a: NodeId, b: NodeId, max_depth: usize) -> bool {
        a != b && (self.reaches_upward(a, b, max_depth) || self.reaches_upward(b, a, max_depth))
    }

    /// Edges whose removal disconnects their component (iterative Tarjan).
    pub fn bridges(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.node_count();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut out = Vec::new();
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // (node, parent, next neighbor position)
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (u, parent, ref mut pos)) = stack.last_mut() {
                if *pos < self.adjacency[u].len() {
                    let w = self.adjacency[u][*pos].index();
                    *pos += 1;
                    if w == parent {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, u, 0));
                    } else {
                        low[u] = low[u].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if parent != usize::MAX {
                        low[parent] = low[parent].min(low[u]);
                        if low[u] > disc[parent] {
                            out.push(canonical(NodeId::from(parent), NodeId::from(u)));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn write_edges<W: Write>(&self, mut w: W) -> Result<()> {
        for &(c, p) in &self.hierarchy {
            writeln!(w, "{}\t{}", self.key(c), self.key(p))?;
        }
        Ok(())
    }

    pub fn write_descriptors<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, t) in self.keys.iter().zip(&self.texts) {
            writeln!(w, "{k}\t{t}")?;
        }
        Ok(())
    }
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(l) => {
            let trimmed = l.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                None
            } else {
                Some(Ok((i + 1, trimmed.to_owned())))
            }
        }
    })
}

/// Parses `child<TAB>parent` lines.
pub fn read_edges<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut edges = Vec::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let mut fields = text.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(c), Some(p), None) if !c.trim().is_empty() && !p.trim().is_empty() => {
                edges.push((c.trim().to_owned(), p.trim().to_owned()))
            }
            _ => {
                return Err(Error::MalformedLine { line, reason: "expected `child<TAB>parent`".into() })
            }
        }
    }
    Ok(edges)
}

/// Parses `key<TAB>free text` lines.
pub fn read_descriptors<R: BufRead>(reader: R) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for item in data_lines(reader) {
        let (line, text) = item?;
        let Some((key, desc)) = text.split_once('\t') else {
            return Err(Error::MalformedLine { line, reason: "expected `key<TAB>text`".into() });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::MalformedLine { line, reason: "empty node key".into() });
        }
        if out.insert(key.to_owned(), desc.trim().to_owned()).is_some() {
            return Err(Error::MalformedLine { line, reason: format!("duplicate descriptor for `{key}`") });
        }
    }
    Ok(out)
}

pub fn load_graph(edges_path: &Path, descriptors_path: &Path) -> Result<Graph> {
    let edges = read_edges(BufReader::new(File::open(edges_path)?))?;
    let descriptors = read_descriptors(BufReader::new(File::open(descriptors_path)?))?;
    Graph::from_edges(&edges, |k| descriptors.get(k).cloned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, &str)]) -> Graph {
        Graph::from_edges(edges, |k| Some(format!("node {k}"))).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Left Eyeball").unwrap(), ["left", "eyeball"]);
        assert_eq!(tokenize("acute leukemia").unwrap(), ["acute", "leukemia"]);
        assert_eq!(tokenize("zone of biceps brachii").unwrap(), ["zone", "of", "biceps", "brachii"]);
        assert_eq!(tokenize("  (Lung), carcinoma. ").unwrap(), ["lung", "carcinoma"]);
        assert_eq!(tokenize("lymphoepithelioma-like").unwrap(), ["lymphoepithelioma-like"]);
        assert!(matches!(tokenize("  "), Err(Error::DescriptorEmpty)));
        assert!(matches!(tokenize("-- ,"), Err(Error::DescriptorEmpty)));
    }

    #[test]
    fn minimal_graph() {
        let g = Graph::from_edges(&[("a", "b")], |k| Some(if k == "a" { "x" } else { "y" }.into())).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (2, 1));
        assert_eq!(g.parents(NodeId(0)), &[NodeId(1)]);
        assert_eq!(g.children(NodeId(1)), &[NodeId(0)]);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            Graph::from_edges(&[("a", "a")], |_| Some("t".into())),
            Err(Error::SelfLoop(k)) if k == "a"
        ));
        assert!(matches!(
            Graph::from_edges(&[("a", "b")], |k| (k == "a").then(|| "t".into())),
            Err(Error::MissingDescriptor(k)) if k == "b"
        ));
        assert!(matches!(
            Graph::from_edges(&[("a", "b")], |_| Some("...".into())),
            Err(Error::DescriptorEmpty)
        ));
        let bad = "a\tb\n# comment\nc d\n";
        assert!(matches!(read_edges(bad.as_bytes()), Err(Error::MalformedLine { line: 3, .. })));
        assert!(matches!(read_descriptors("a x\n".as_bytes()), Err(Error::MalformedLine { line: 1, .. })));
    }

    #[test]
    fn duplicates_collapse() {
        let g = graph(&[("a", "b"), ("b", "a"), ("a", "b"), ("b", "c")]);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.duplicate_edges(), 2);
        assert_eq!(g.neighbors(NodeId(1)), &[NodeId(0), NodeId(2)]);
    }

    #[test]
    fn hop_distance_basics() {
        let g = graph(&[("a", "b"), ("b", "c"), ("c", "d")]);
        let (a, b, d) = (NodeId(0), NodeId(1), NodeId(3));
        assert_eq!(g.hop_distance(a, a, 0), Some(0));
        assert_eq!(g.hop_distance(a, b, 5), Some(1));
        assert_eq!(g.hop_distance(a, d, 5), Some(3));
        assert_eq!(g.hop_distance(a, d, 2), None);
    }

    #[test]
    fn connectivity() {
        assert!(graph(&[("a", "b"), ("b", "c")]).is_connected());
        assert!(!graph(&[("a", "b"), ("c", "d")]).is_connected());
    }

    #[test]
    fn hierarchy_relatives() {
        // gp <- p <- c1, p <- c2
        let g = graph(&[("p", "gp"), ("c1", "p"), ("c2", "p")]);
        let id = |k| g.node(k).unwrap();
        assert!(g.is_hierarchy_relative(id("c1"), id("p"), 10));
        assert!(g.is_hierarchy_relative(id("p"), id("c1"), 10));
        assert!(g.is_hierarchy_relative(id("c1"), id("gp"), 10));
        assert!(!g.is_hierarchy_relative(id("c1"), id("gp"), 1));
        assert!(!g.is_hierarchy_relative(id("c1"), id("c2"), 10));
        let anc = g.ancestors_within(id("c1"), 5);
        assert_eq!(anc, vec![(id("p"), 1), (id("gp"), 2)]);
    }

    #[test]
    fn bridges_of_cycle_with_tail() {
        let g = graph(&[("a", "b"), ("b", "c"), ("c", "a"), ("c", "d")]);
        assert_eq!(g.bridges(), vec![(NodeId(2), NodeId(3))]);
        let removed = HashSet::from([(NodeId(2), NodeId(3))]);
        assert!(!g.without_edges(&removed).is_connected());
        let removed = HashSet::from([(NodeId(0), NodeId(1))]);
        assert!(g.without_edges(&removed).is_connected());
    }

    #[test]
    fn serialize_reload_is_identical() {
        let g = graph(&[("a", "b"), ("b", "c"), ("c", "a"), ("d", "c"), ("c", "d")]);
        let (mut e, mut d) = (Vec::new(), Vec::new());
        g.write_edges(&mut e).unwrap();
        g.write_descriptors(&mut d).unwrap();
        let descs = read_descriptors(d.as_slice()).unwrap();
        let h = Graph::from_edges(&read_edges(e.as_slice()).unwrap(), |k| descs.get(k).cloned()).unwrap();
        assert_eq!(g.keys(), h.keys());
        for v in g.nodes() {
            assert_eq!(g.neighbors(v), h.neighbors(v));
            assert_eq!(g.descriptor(v), h.descriptor(v));
        }
    }
}
