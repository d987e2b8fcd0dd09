//! Descriptor encoders producing the focus embedding f(v) and the context
//! embedding f′(v) of every node.
//!
//! Each side owns a word table (or, for [`EncoderKind::Lookup`], a node table)
//! and, for the recurrent kinds, its own GRU cells. Forward passes return a
//! [`Trace`] holding the intermediate states the exact backward pass needs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{Graph, NodeId, Vocabulary};
use crate::tensor::{add_assign, axpy, sigmoid, Matrix};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// One free vector per node; classic node2vec.
    Lookup,
    /// Mean of the descriptor's word vectors.
    Avg,
    /// Final hidden state of a left-to-right GRU.
    Gru,
    /// Bidirectional GRU, summed directions plus residual word vectors,
    /// max-pooled over positions.
    BiGruMaxRes,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] =
        [EncoderKind::Lookup, EncoderKind::Avg, EncoderKind::Gru, EncoderKind::BiGruMaxRes];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Lookup => "lookup",
            EncoderKind::Avg => "avg",
            EncoderKind::Gru => "gru",
            EncoderKind::BiGruMaxRes => "bigru-max-res",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            EncoderKind::Lookup => 0,
            EncoderKind::Avg => 1,
            EncoderKind::Gru => 2,
            EncoderKind::BiGruMaxRes => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }

    fn cells(self) -> usize {
        match self {
            EncoderKind::Lookup | EncoderKind::Avg => 0,
            EncoderKind::Gru => 1,
            EncoderKind::BiGruMaxRes => 2,
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown encoder `{s}` (expected lookup, avg, gru or bigru-max-res)"))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Focus,
    Context,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Focus => "focus",
            Side::Context => "context",
        }
    }
}

/// GRU cell parameters. Also used as the gradient accumulator of a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_h: Matrix,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

impl GruCell {
    pub fn zeros(dim: usize) -> Self {
        let m = || Matrix::zeros(dim, dim);
        Self {
            w_z: m(),
            w_r: m(),
            w_h: m(),
            u_z: m(),
            u_r: m(),
            u_h: m(),
            b_z: vec![0.0; dim],
            b_r: vec![0.0; dim],
            b_h: vec![0.0; dim],
        }
    }

    /// Matrices uniform in ±1/√d, zero biases.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut cell = Self::zeros(dim);
        for m in cell.matrices_mut() {
            *m = Matrix::uniform(dim, dim, bound, rng);
        }
        cell
    }

    pub fn dim(&self) -> usize {
        self.b_z.len()
    }

    fn matrices_mut(&mut self) -> [&mut Matrix; 6] {
        [&mut self.w_z, &mut self.w_r, &mut self.w_h, &mut self.u_z, &mut self.u_r, &mut self.u_h]
    }

    /// All tensors in storage order: W_z, W_r, W_h, U_z, U_r, U_h, b_z, b_r, b_h.
    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            self.w_z.as_slice(),
            self.w_r.as_slice(),
            self.w_h.as_slice(),
            self.u_z.as_slice(),
            self.u_r.as_slice(),
            self.u_h.as_slice(),
            &self.b_z,
            &self.b_r,
            &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.u_z.as_mut_slice(),
            self.u_r.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn add_assign(&mut self, other: &GruCell) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            add_assign(a, b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn step(&self, x: &[f64], h_prev: &[f64]) -> GruStep {
        let d = self.dim();
        let gate = |w: &Matrix, u: &Matrix, b: &[f64], h: &[f64]| {
            let mut a = b.to_vec();
            w.mul_vec_add(x, &mut a);
            u.mul_vec_add(h, &mut a);
            a
        };
        let z: Vec<f64> = gate(&self.w_z, &self.u_z, &self.b_z, h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(&self.w_r, &self.u_r, &self.b_r, h_prev).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(&self.w_h, &self.u_h, &self.b_h, &rh).into_iter().map(f64::tanh).collect();
        let h = (0..d).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * cand[i]).collect();
        GruStep { h_prev: h_prev.to_vec(), z, r, rh, cand, h }
    }

    /// Accumulates parameter gradients into `grad`, and input / previous-state
    /// gradients into `dx` / `dh_prev`.
    fn step_backward(
        &self,
        x: &[f64],
        s: &GruStep,
        dh: &[f64],
        grad: &mut GruCell,
        dx: &mut [f64],
        dh_prev: &mut [f64],
    ) {
        let d = self.dim();
        let mut da_z = vec![0.0; d];
        let mut da_h = vec![0.0; d];
        for i in 0..d {
            let dz = dh[i] * (s.cand[i] - s.h_prev[i]);
            let dcand = dh[i] * s.z[i];
            dh_prev[i] += dh[i] * (1.0 - s.z[i]);
            da_z[i] = dz * s.z[i] * (1.0 - s.z[i]);
            da_h[i] = dcand * (1.0 - s.cand[i] * s.cand[i]);
        }

        grad.w_h.add_outer(&da_h, x);
        grad.u_h.add_outer(&da_h, &s.rh);
        add_assign(&mut grad.b_h, &da_h);
        self.w_h.mul_vec_t_add(&da_h, dx);
        let mut drh = vec![0.0; d];
        self.u_h.mul_vec_t_add(&da_h, &mut drh);
        let mut da_r = vec![0.0; d];
        for i in 0..d {
            dh_prev[i] += drh[i] * s.r[i];
            let dr = drh[i] * s.h_prev[i];
            da_r[i] = dr * s.r[i] * (1.0 - s.r[i]);
        }

        grad.w_z.add_outer(&da_z, x);
        grad.u_z.add_outer(&da_z, &s.h_prev);
        add_assign(&mut grad.b_z, &da_z);
        self.w_z.mul_vec_t_add(&da_z, dx);
        self.u_z.mul_vec_t_add(&da_z, dh_prev);

        grad.w_r.add_outer(&da_r, x);
        grad.u_r.add_outer(&da_r, &s.h_prev);
        add_assign(&mut grad.b_r, &da_r);
        self.w_r.mul_vec_t_add(&da_r, dx);
        self.u_r.mul_vec_t_add(&da_r, dh_prev);
    }
}

/// Intermediate values of one GRU application.
#[derive(Debug, Clone)]
pub struct GruStep {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    rh: Vec<f64>,
    cand: Vec<f64>,
    h: Vec<f64>,
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn check_shape(dim: usize, v: &[f64]) -> Result<()> {
    if v.len() != dim {
        return Err(Error::InvalidConfig(vec![format!("vector of length {} where {dim} expected", v.len())]));
    }
    Ok(())
}

/// One GRU update `h = (1−z)⊙h_prev + z⊙h̃`.
pub fn gru_cell(x: &[f64], h_prev: &[f64], params: &GruCell) -> Result<Vec<f64>> {
    check_shape(params.dim(), x)?;
    check_shape(params.dim(), h_prev)?;
    if !all_finite(x) || !all_finite(h_prev) {
        return Err(Error::NonFinite);
    }
    let h = params.step(x, h_prev).h;
    if !all_finite(&h) {
        return Err(Error::NonFinite);
    }
    Ok(h)
}

fn check_tokens(tokens: &[u32], table: &Matrix) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::DescriptorEmpty);
    }
    if let Some(&t) = tokens.iter().find(|&&t| t as usize >= table.rows()) {
        return Err(Error::InvalidConfig(vec![format!("token {t} outside table of {} rows", table.rows())]));
    }
    Ok(())
}

fn finite_or_err(v: Vec<f64>) -> Result<Vec<f64>> {
    if all_finite(&v) {
        Ok(v)
    } else {
        Err(Error::NonFinite)
    }
}

/// Mean of the token rows.
pub fn encode_avg(tokens: &[u32], table: &Matrix) -> Result<Vec<f64>> {
    check_tokens(tokens, table)?;
    let mut out = vec![0.0; table.cols()];
    for &t in tokens {
        add_assign(&mut out, table.row(t as usize));
    }
    let inv = 1.0 / tokens.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    finite_or_err(out)
}

fn run_gru<'a>(cell: &GruCell, table: &Matrix, order: impl Iterator<Item = &'a u32>) -> Vec<GruStep> {
    let mut h = vec![0.0; cell.dim()];
    let mut steps = Vec::new();
    for &t in order {
        let s = cell.step(table.row(t as usize), &h);
        h.clone_from(&s.h);
        steps.push(s);
    }
    steps
}

/// Last hidden state of a left-to-right pass starting from the zero state.
pub fn encode_gru(tokens: &[u32], table: &Matrix, cell: &GruCell) -> Result<Vec<f64>> {
    check_tokens(tokens, table)?;
    let steps = run_gru(cell, table, tokens.iter());
    finite_or_err(steps.last().expect("non-empty").h.clone())
}

struct BiGruPass {
    fwd: Vec<GruStep>,
    /// Right-to-left pass in processing order: `bwd[k]` covers position `n-1-k`.
    bwd: Vec<GruStep>,
    out: Vec<f64>,
    argmax: Vec<usize>,
}

fn bigru_pass(tokens: &[u32], table: &Matrix, fwd: &GruCell, bwd: &GruCell) -> BiGruPass {
    let n = tokens.len();
    let d = table.cols();
    let f = run_gru(fwd, table, tokens.iter());
    let b = run_gru(bwd, table, tokens.iter().rev());
    let mut out = vec![f64::NEG_INFINITY; d];
    let mut argmax = vec![0usize; d];
    for t in 0..n {
        let x = table.row(tokens[t] as usize);
        let hb = &b[n - 1 - t].h;
        for j in 0..d {
            let v = f[t].h[j] + hb[j] + x[j];
            // strict comparison keeps the lowest position on ties
            if v > out[j] || t == 0 {
                out[j] = v;
                argmax[j] = t;
            }
        }
    }
    BiGruPass { fwd: f, bwd: b, out, argmax }
}

/// Bidirectional GRU with residual word vectors, max-pooled per dimension.
/// Also returns the winning position of every dimension.
pub fn encode_bigru_max_res(
    tokens: &[u32],
    table: &Matrix,
    fwd: &GruCell,
    bwd: &GruCell,
) -> Result<(Vec<f64>, Vec<usize>)> {
    check_tokens(tokens, table)?;
    let pass = bigru_pass(tokens, table, fwd, bwd);
    Ok((finite_or_err(pass.out)?, pass.argmax))
}

/// Cached forward state of one encoding.
pub enum Trace {
    Lookup { row: u32 },
    Avg { tokens: Vec<u32> },
    Gru { tokens: Vec<u32>, steps: Vec<GruStep> },
    BiGru { tokens: Vec<u32>, fwd: Vec<GruStep>, bwd: Vec<GruStep>, argmax: Vec<usize> },
}

/// Parameters of one side (focus or context).
#[derive(Debug, Clone, PartialEq)]
pub struct SideParams {
    pub table: Matrix,
    pub fwd: Option<GruCell>,
    pub bwd: Option<GruCell>,
}

impl SideParams {
    fn random<R: Rng + ?Sized>(kind: EncoderKind, rows: usize, dim: usize, rng: &mut R) -> Self {
        let table = Matrix::uniform(rows, dim, 0.5 / dim as f64, rng);
        let fwd = (kind.cells() >= 1).then(|| GruCell::random(dim, rng));
        let bwd = (kind.cells() >= 2).then(|| GruCell::random(dim, rng));
        Self { table, fwd, bwd }
    }

    /// Table first, then forward cell tensors, then backward cell tensors.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.table.as_slice()];
        for cell in [&self.fwd, &self.bwd].into_iter().flatten() {
            out.extend(cell.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.table.as_mut_slice()];
        for cell in [&mut self.fwd, &mut self.bwd].into_iter().flatten() {
            out.extend(cell.tensors_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Gradient of one side: sparse table rows plus dense cell gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct SideGrads {
    pub rows: BTreeMap<u32, Vec<f64>>,
    pub fwd: Option<GruCell>,
    pub bwd: Option<GruCell>,
}

impl SideGrads {
    pub fn zeros_like(params: &SideParams) -> Self {
        Self {
            rows: BTreeMap::new(),
            fwd: params.fwd.as_ref().map(|c| GruCell::zeros(c.dim())),
            bwd: params.bwd.as_ref().map(|c| GruCell::zeros(c.dim())),
        }
    }

    fn row_mut(&mut self, row: u32, dim: usize) -> &mut Vec<f64> {
        self.rows.entry(row).or_insert_with(|| vec![0.0; dim])
    }

    pub fn add_assign(&mut self, other: &SideGrads) {
        for (&r, g) in &other.rows {
            add_assign(self.row_mut(r, g.len()), g);
        }
        for (mine, theirs) in [(&mut self.fwd, &other.fwd), (&mut self.bwd, &other.bwd)] {
            if let (Some(a), Some(b)) = (mine.as_mut(), theirs.as_ref()) {
                a.add_assign(b);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().all(|r| all_finite(r))
            && [&self.fwd, &self.bwd].into_iter().flatten().all(GruCell::is_finite)
    }

    pub(crate) fn cell_tensors(&self) -> Vec<&[f64]> {
        [&self.fwd, &self.bwd].into_iter().flatten().flat_map(|c| c.tensors()).collect()
    }

    /// Dense gradient laid out like [`SideParams::tensors`].
    pub fn to_dense(&self, params: &SideParams) -> Vec<Vec<f64>> {
        let mut table = vec![0.0; params.table.as_slice().len()];
        let d = params.table.cols();
        for (&r, g) in &self.rows {
            table[r as usize * d..(r as usize + 1) * d].copy_from_slice(g);
        }
        let mut out = vec![table];
        for cell in [&self.fwd, &self.bwd].into_iter().flatten() {
            out.extend(cell.tensors().iter().map(|t| t.to_vec()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub focus: SideGrads,
    pub context: SideGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &EncoderModel) -> Self {
        Self { focus: SideGrads::zeros_like(&model.focus), context: SideGrads::zeros_like(&model.context) }
    }

    pub fn side(&self, side: Side) -> &SideGrads {
        match side {
            Side::Focus => &self.focus,
            Side::Context => &self.context,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut SideGrads {
        match side {
            Side::Focus => &mut self.focus,
            Side::Context => &mut self.context,
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.focus.add_assign(&other.focus);
        self.context.add_assign(&other.context);
    }

    pub fn is_finite(&self) -> bool {
        self.focus.is_finite() && self.context.is_finite()
    }
}

/// Per-node input rows in a model's own index space: word ids for the text
/// encoders, the node's own row for [`EncoderKind::Lookup`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeInputs(Vec<Vec<u32>>);

impl NodeInputs {
    pub fn get(&self, v: NodeId) -> &[u32] {
        &self.0[v.index()]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub kind: EncoderKind,
    pub dim: usize,
    /// Words for text encoders, node keys for `Lookup`.
    pub vocab: Vocabulary,
    pub focus: SideParams,
    pub context: SideParams,
}

impl EncoderModel {
    /// Tables uniform in ±0.5/d; see [`GruCell::random`] for the cells.
    pub fn new<R: Rng + ?Sized>(kind: EncoderKind, dim: usize, vocab: Vocabulary, rng: &mut R) -> Self {
        let rows = vocab.len();
        let focus = SideParams::random(kind, rows, dim, rng);
        let context = SideParams::random(kind, rows, dim, rng);
        Self { kind, dim, vocab, focus, context }
    }

    pub fn for_graph<R: Rng + ?Sized>(kind: EncoderKind, dim: usize, g: &Graph, rng: &mut R) -> Self {
        let vocab = match kind {
            EncoderKind::Lookup => Vocabulary::from_words(g.keys().to_vec()).expect("node keys are unique"),
            _ => g.vocabulary().clone(),
        };
        Self::new(kind, dim, vocab, rng)
    }

    pub fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::Focus => &self.focus,
            Side::Context => &self.context,
        }
    }

    pub fn side_mut(&mut self, side: Side) -> &mut SideParams {
        match side {
            Side::Focus => &mut self.focus,
            Side::Context => &mut self.context,
        }
    }

    /// Maps every node of `g` onto this model's rows.
    pub fn inputs(&self, g: &Graph) -> Result<NodeInputs> {
        let mut out = Vec::with_capacity(g.node_count());
        for v in g.nodes() {
            let row = match self.kind {
                EncoderKind::Lookup => {
                    vec![self.vocab.get(g.key(v)).ok_or_else(|| Error::UnknownNode(g.key(v).to_owned()))?]
                }
                _ => g
                    .descriptor_words(v)
                    .into_iter()
                    .map(|w| {
                        self.vocab
                            .get(w)
                            .ok_or_else(|| Error::ModelFormat(format!("word `{w}` missing from model vocabulary")))
                    })
                    .collect::<Result<_>>()?,
            };
            out.push(row);
        }
        Ok(NodeInputs(out))
    }

    pub fn forward(&self, side: Side, tokens: &[u32]) -> Result<(Vec<f64>, Trace)> {
        let p = self.side(side);
        check_tokens(tokens, &p.table)?;
        let tokens_vec = tokens.to_vec();
        match self.kind {
            EncoderKind::Lookup => {
                let out = finite_or_err(p.table.row(tokens[0] as usize).to_vec())?;
                Ok((out, Trace::Lookup { row: tokens[0] }))
            }
            EncoderKind::Avg => Ok((encode_avg(tokens, &p.table)?, Trace::Avg { tokens: tokens_vec })),
            EncoderKind::Gru => {
                let cell = p.fwd.as_ref().expect("gru cell");
                let steps = run_gru(cell, &p.table, tokens.iter());
                let out = finite_or_err(steps.last().expect("non-empty").h.clone())?;
                Ok((out, Trace::Gru { tokens: tokens_vec, steps }))
            }
            EncoderKind::BiGruMaxRes => {
                let pass = bigru_pass(tokens, &p.table, p.fwd.as_ref().expect("fwd"), p.bwd.as_ref().expect("bwd"));
                let out = finite_or_err(pass.out)?;
                Ok((out, Trace::BiGru { tokens: tokens_vec, fwd: pass.fwd, bwd: pass.bwd, argmax: pass.argmax }))
            }
        }
    }

    pub fn encode(&self, side: Side, tokens: &[u32]) -> Result<Vec<f64>> {
        self.forward(side, tokens).map(|(out, _)| out)
    }

    pub fn node_embedding(&self, inputs: &NodeInputs, v: NodeId, side: Side) -> Result<Vec<f64>> {
        self.encode(side, inputs.get(v))
    }

    /// Max-pool winners per dimension; only defined for `BiGruMaxRes`.
    pub fn argmax_positions(&self, side: Side, tokens: &[u32]) -> Result<Vec<usize>> {
        if self.kind != EncoderKind::BiGruMaxRes {
            return Err(Error::UnsupportedEncoder(self.kind.name().into()));
        }
        let p = self.side(side);
        encode_bigru_max_res(tokens, &p.table, p.fwd.as_ref().expect("fwd"), p.bwd.as_ref().expect("bwd"))
            .map(|(_, argmax)| argmax)
    }

    /// All node embeddings of one side as a |V|×d matrix.
    pub fn embed_all(&self, inputs: &NodeInputs, side: Side, exec: Exec) -> Result<Matrix> {
        let rows = exec.map_slice(&inputs.0, |tokens| self.encode(side, tokens));
        let mut data = Vec::with_capacity(inputs.len() * self.dim);
        for r in rows {
            data.extend(r?);
        }
        Ok(Matrix::from_vec(inputs.len(), self.dim, data))
    }

    /// Adds the gradient of `upstream · output` to `grads`.
    pub fn backward(&self, side: Side, trace: &Trace, upstream: &[f64], grads: &mut SideGrads) {
        let p = self.side(side);
        let d = self.dim;
        match trace {
            Trace::Lookup { row } => add_assign(grads.row_mut(*row, d), upstream),
            Trace::Avg { tokens } => {
                let scale = 1.0 / tokens.len() as f64;
                for &t in tokens {
                    axpy(scale, upstream, grads.row_mut(t, d));
                }
            }
            Trace::Gru { tokens, steps } => {
                let cell = p.fwd.as_ref().expect("gru cell");
                let gcell = grads.fwd.as_mut().expect("gru grad");
                let mut dh = upstream.to_vec();
                let mut dxs = vec![vec![0.0; d]; tokens.len()];
                for t in (0..tokens.len()).rev() {
                    let mut dh_prev = vec![0.0; d];
                    cell.step_backward(p.table.row(tokens[t] as usize), &steps[t], &dh, gcell, &mut dxs[t], &mut dh_prev);
                    dh = dh_prev;
                }
                for (&t, dx) in tokens.iter().zip(&dxs) {
                    add_assign(grads.row_mut(t, d), dx);
                }
            }
            Trace::BiGru { tokens, fwd, bwd, argmax } => {
                let n = tokens.len();
                let mut d_state = vec![vec![0.0; d]; n];
                for (j, &t) in argmax.iter().enumerate() {
                    d_state[t][j] += upstream[j];
                }
                // residual path
                let mut dxs = d_state.clone();
                {
                    let cell = p.fwd.as_ref().expect("fwd");
                    let gcell = grads.fwd.as_mut().expect("fwd grad");
                    let mut carry = vec![0.0; d];
                    for t in (0..n).rev() {
                        let dh: Vec<f64> = d_state[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
                        let mut dh_prev = vec![0.0; d];
                        cell.step_backward(p.table.row(tokens[t] as usize), &fwd[t], &dh, gcell, &mut dxs[t], &mut dh_prev);
                        carry = dh_prev;
                    }
                }
                {
                    let cell = p.bwd.as_ref().expect("bwd");
                    let gcell = grads.bwd.as_mut().expect("bwd grad");
                    let mut carry = vec![0.0; d];
                    for t in 0..n {
                        let dh: Vec<f64> = d_state[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
                        let mut dh_prev = vec![0.0; d];
                        let k = n - 1 - t;
                        cell.step_backward(p.table.row(tokens[t] as usize), &bwd[k], &dh, gcell, &mut dxs[t], &mut dh_prev);
                        carry = dh_prev;
                    }
                }
                for (&t, dx) in tokens.iter().zip(&dxs) {
                    add_assign(grads.row_mut(t, d), dx);
                }
            }
        }
    }
}

/// Forward traces keyed by (node, side), consumed by [`encoder_backward`].
#[derive(Default)]
pub struct ForwardCache {
    traces: HashMap<(NodeId, Side), Trace>,
}

impl ForwardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.traces.clear();
    }
}

/// Forward pass for node `v` that records its trace in `cache`.
pub fn node_forward(
    model: &EncoderModel,
    inputs: &NodeInputs,
    cache: &mut ForwardCache,
    v: NodeId,
    side: Side,
) -> Result<Vec<f64>> {
    let (out, trace) = model.forward(side, inputs.get(v))?;
    cache.traces.insert((v, side), trace);
    Ok(out)
}

/// Gradient of `upstream · f(v)` (or `f′(v)`) into `grads`, using the trace
/// left by [`node_forward`].
pub fn encoder_backward(
    model: &EncoderModel,
    cache: &ForwardCache,
    v: NodeId,
    side: Side,
    upstream: &[f64],
    grads: &mut ModelGrads,
) -> Result<()> {
    let trace = cache
        .traces
        .get(&(v, side))
        .ok_or(Error::StaleBackward { node: v.index(), side: side.name() })?;
    model.backward(side, trace, upstream, grads.side_mut(side));
    Ok(())
}
