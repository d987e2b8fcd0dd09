//! Qualitative tooling: nearest neighbors, max-pool importance scores and
//! pairwise similarity case tables.

use std::io::Write;

use crate::encoders::{EncoderKind, EncoderModel, NodeInputs, Side};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{Graph, NodeId};
use crate::tensor::{cosine, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub node: NodeId,
    pub cosine: f64,
    /// Undirected distance in the graph the query ran against.
    pub hops: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborResult {
    pub target: NodeId,
    pub neighbors: Vec<Neighbor>,
}

fn hops_from(dist: &[usize], v: NodeId) -> Option<usize> {
    Some(dist[v.index()]).filter(|&d| d != usize::MAX)
}

/// Top `top_n` nodes by cosine of focus embeddings (capped at |V|−1); ties
/// broken by node id.
pub fn nearest_from_embeddings(emb: &Matrix, g: &Graph, target: NodeId, top_n: usize) -> NeighborResult {
    let t = emb.row(target.index());
    let mut scored: Vec<(NodeId, f64)> = g
        .nodes()
        .filter(|&v| v != target)
        .map(|v| (v, cosine(t, emb.row(v.index())).unwrap_or(0.0)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n.min(g.node_count().saturating_sub(1)));
    let dist = g.bfs_distances(target);
    let neighbors = scored
        .into_iter()
        .map(|(node, cosine)| Neighbor { node, cosine, hops: hops_from(&dist, node) })
        .collect();
    NeighborResult { target, neighbors }
}

pub fn nearest_neighbors(
    model: &EncoderModel,
    inputs: &NodeInputs,
    g: &Graph,
    target: NodeId,
    top_n: usize,
    exec: Exec,
) -> Result<NeighborResult> {
    let emb = model.embed_all(inputs, Side::Focus, exec)?;
    Ok(nearest_from_embeddings(&emb, g, target, top_n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub node: NodeId,
    /// Per-token score in [0, 1], averaged over the focus and context sides.
    pub scores: Vec<f64>,
    /// Raw per-token max-pool wins, focus side then context side.
    pub wins: [Vec<usize>; 2],
}

/// Counts how many pooled dimensions each token wins on each side,
/// normalizes each side by its largest count, and averages the sides.
pub fn importance_scores(model: &EncoderModel, inputs: &NodeInputs, v: NodeId) -> Result<HeatmapRow> {
    if model.kind != EncoderKind::BiGruMaxRes {
        return Err(Error::UnsupportedEncoder(model.kind.name().into()));
    }
    let tokens = inputs.get(v);
    let mut wins = [vec![0usize; tokens.len()], vec![0usize; tokens.len()]];
    for (side, counts) in [Side::Focus, Side::Context].into_iter().zip(wins.iter_mut()) {
        for t in model.argmax_positions(side, tokens)? {
            counts[t] += 1;
        }
    }
    fn normalized(c: &[usize]) -> impl Iterator<Item = f64> + '_ {
        let max = *c.iter().max().expect("non-empty descriptor") as f64;
        c.iter().map(move |&x| x as f64 / max)
    }
    let scores = normalized(&wins[0]).zip(normalized(&wins[1])).map(|(a, b)| (a + b) / 2.0).collect();
    Ok(HeatmapRow { node: v, scores, wins })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub a: NodeId,
    pub b: NodeId,
    pub cosine: f64,
    pub hops: Option<usize>,
}

/// Cosine of focus embeddings and graph distance for each pair.
pub fn similarity_case(
    model: &EncoderModel,
    inputs: &NodeInputs,
    g: &Graph,
    pairs: &[(NodeId, NodeId)],
) -> Result<Vec<CaseRow>> {
    pairs
        .iter()
        .map(|&(a, b)| {
            let fa = model.node_embedding(inputs, a, Side::Focus)?;
            let fb = model.node_embedding(inputs, b, Side::Focus)?;
            let cosine = cosine(&fa, &fb).ok_or(Error::ZeroVector)?;
            let hops = hops_from(&g.bfs_distances(a), b);
            Ok(CaseRow { a, b, cosine, hops })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn hops_field(h: Option<usize>) -> String {
    h.map_or_else(|| "inf".to_owned(), |h| h.to_string())
}

/// `rank,key,descriptor,cos,cos_pct,hops`
pub fn write_neighbors_csv<W: Write>(g: &Graph, result: &NeighborResult, mut w: W) -> Result<()> {
    writeln!(w, "rank,key,descriptor,cos,cos_pct,hops")?;
    for (i, n) in result.neighbors.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{:.6},{:.1},{}",
            i + 1,
            csv_field(g.key(n.node)),
            csv_field(g.text(n.node)),
            n.cosine,
            100.0 * n.cosine,
            hops_field(n.hops)
        )?;
    }
    Ok(())
}

/// `key_a,descriptor_a,key_b,descriptor_b,cos,cos_pct,hops`
pub fn write_cases_csv<W: Write>(g: &Graph, rows: &[CaseRow], mut w: W) -> Result<()> {
    writeln!(w, "key_a,descriptor_a,key_b,descriptor_b,cos,cos_pct,hops")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.1},{}",
            csv_field(g.key(r.a)),
            csv_field(g.text(r.a)),
            csv_field(g.key(r.b)),
            csv_field(g.text(r.b)),
            r.cosine,
            100.0 * r.cosine,
            hops_field(r.hops)
        )?;
    }
    Ok(())
}

/// `key,position,token,score,focus_wins,context_wins`
pub fn write_heatmap_csv<W: Write>(g: &Graph, rows: &[HeatmapRow], mut w: W) -> Result<()> {
    writeln!(w, "key,position,token,score,focus_wins,context_wins")?;
    for row in rows {
        for (i, word) in g.descriptor_words(row.node).into_iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{:.6},{},{}",
                csv_field(g.key(row.node)),
                i,
                csv_field(word),
                row.scores[i],
                row.wins[0][i],
                row.wins[1][i]
            )?;
        }
    }
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One row of shaded cells per node, darker for more important tokens.
pub fn write_heatmap_svg<W: Write>(g: &Graph, rows: &[HeatmapRow], mut w: W) -> Result<()> {
    const CELL_W: usize = 110;
    const CELL_H: usize = 28;
    let cols = rows.iter().map(|r| r.scores.len()).max().unwrap_or(0);
    let (width, height) = (cols.max(1) * CELL_W, rows.len().max(1) * CELL_H);
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    )?;
    for (y, row) in rows.iter().enumerate() {
        for (x, (word, score)) in g.descriptor_words(row.node).into_iter().zip(&row.scores).enumerate() {
            let (px, py) = (x * CELL_W, y * CELL_H);
            writeln!(
                w,
                r#"<rect x="{px}" y="{py}" width="{CELL_W}" height="{CELL_H}" fill="rgb(200,30,30)" fill-opacity="{score:.3}" stroke="white"/>"#
            )?;
            writeln!(
                w,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                px + CELL_W / 2,
                py + CELL_H / 2 + 4,
                xml_escape(word)
            )?;
        }
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Graph {
        let texts = [("a", "left eyeball"), ("b", "wall of left eyeball"), ("c", "left eyeball"), ("d", "lung")];
        Graph::from_edges(&[("b", "a"), ("c", "a"), ("d", "c")], |k| {
            texts.iter().find(|(key, _)| *key == k).map(|(_, t)| t.to_string())
        })
        .unwrap()
    }

    #[test]
    fn duplicate_descriptor_ranks_first() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = EncoderModel::for_graph(EncoderKind::Avg, 8, &g, &mut rng);
        let inputs = model.inputs(&g).unwrap();
        let res = nearest_neighbors(&model, &inputs, &g, NodeId(1), 10, Exec::Sequential).unwrap();
        assert_eq!(res.neighbors.len(), 3);
        let a = g.node("a").unwrap();
        let res = nearest_neighbors(&model, &inputs, &g, a, 2, Exec::Sequential).unwrap();
        assert_eq!(res.neighbors[0].node, g.node("c").unwrap());
        assert!((res.neighbors[0].cosine - 1.0).abs() < 1e-12);
        assert_eq!(res.neighbors[0].hops, Some(1));
    }

    #[test]
    fn importance_requires_bigru() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = EncoderModel::for_graph(EncoderKind::Gru, 4, &g, &mut rng);
        let inputs = model.inputs(&g).unwrap();
        assert!(matches!(importance_scores(&model, &inputs, NodeId(0)), Err(Error::UnsupportedEncoder(_))));
    }

    #[test]
    fn importance_single_token_and_win_totals() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = EncoderModel::for_graph(EncoderKind::BiGruMaxRes, 6, &g, &mut rng);
        let inputs = model.inputs(&g).unwrap();
        let lung = importance_scores(&model, &inputs, g.node("d").unwrap()).unwrap();
        assert_eq!(lung.scores, vec![1.0]);
        let wall = importance_scores(&model, &inputs, g.node("b").unwrap()).unwrap();
        for side in &wall.wins {
            assert_eq!(side.iter().sum::<usize>(), 6);
        }
        assert!(wall.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(wall.scores.iter().any(|&s| s >= 0.5));
    }

    #[test]
    fn case_rows_and_csv() {
        let g = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = EncoderModel::for_graph(EncoderKind::Lookup, 4, &g, &mut rng);
        let inputs = model.inputs(&g).unwrap();
        let rows = similarity_case(&model, &inputs, &g, &[(NodeId(0), NodeId(0)), (NodeId(1), NodeId(3))]).unwrap();
        assert!((rows[0].cosine - 1.0).abs() < 1e-12);
        assert_eq!(rows[0].hops, Some(0));
        assert_eq!(rows[1].hops, Some(2));
        let mut out = Vec::new();
        write_cases_csv(&g, &rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("key_a,descriptor_a,key_b,descriptor_b,cos,cos_pct,hops\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
