//! Skip-gram training with negative sampling over walk pairs, optimized with
//! row-sparse Adam.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderKind, EncoderModel, ModelGrads, NodeInputs, Side, SideParams, Trace};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{Graph, NodeId};
use crate::seeding;
use crate::tensor::{axpy, dot, log_sigmoid, sigmoid};
use crate::walks::{build_alias_tables, extract_pairs, generate_walks, Walk, WalkConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub negatives_per_pair: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub walk: WalkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 30,
            batch_size: 128,
            negatives_per_pair: 2,
            epochs: 1,
            learning_rate: 1e-3,
            seed: 0,
            walk: WalkConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim < 1 {
            out.push("dim must be at least 1".into());
        }
        if self.batch_size < 1 {
            out.push("batch_size must be at least 1".into());
        }
        if self.negatives_per_pair < 1 {
            out.push("negatives_per_pair must be at least 1".into());
        }
        if self.epochs < 1 {
            out.push("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!("learning_rate must be positive (got {})", self.learning_rate));
        }
        out.extend(self.walk.problems().into_iter().map(|p| format!("walk: {p}")));
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

/// Full softmax p(u | v) over `nodes`. Quadratic; meant for small graphs and
/// tests.
pub fn softmax_prob(model: &EncoderModel, inputs: &NodeInputs, u: NodeId, v: NodeId, nodes: &[NodeId]) -> Result<f64> {
    let f_v = model.node_embedding(inputs, v, Side::Focus)?;
    let score = |w: NodeId| model.node_embedding(inputs, w, Side::Context).map(|c| dot(&c, &f_v));
    let scores = nodes.iter().map(|&w| score(w)).collect::<Result<Vec<_>>>()?;
    let target = score(u)?;
    let shift = scores.iter().copied().fold(target, f64::max);
    let denom: f64 = scores.iter().map(|s| (s - shift).exp()).sum();
    Ok((target - shift).exp() / denom)
}

/// Uniform draws from `0..node_count` minus `exclude`, with replacement.
pub fn sample_negatives<R: Rng + ?Sized>(
    rng: &mut R,
    node_count: usize,
    count: usize,
    exclude: &[NodeId],
) -> Result<Vec<NodeId>> {
    let mut distinct: Vec<NodeId> = exclude.iter().copied().filter(|v| v.index() < node_count).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let available = node_count - distinct.len();
    if available < count || (available == 0 && count > 0) {
        return Err(Error::NotEnoughNodes { needed: count, available });
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v = NodeId::from(rng.random_range(0..node_count));
        if distinct.binary_search(&v).is_err() {
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_focus: Vec<f64>,
    pub grad_context: Vec<f64>,
    pub grad_negatives: Vec<Vec<f64>>,
}

/// `−ln σ(f′_u·f_v) − Σ ln σ(−f′_n·f_v)` and its gradients.
pub fn pair_loss(f_v: &[f64], f_u: &[f64], negatives: &[&[f64]]) -> PairLoss {
    let pos = dot(f_u, f_v);
    let mut loss = -log_sigmoid(pos);
    let coef = sigmoid(pos) - 1.0;
    let mut grad_focus: Vec<f64> = f_u.iter().map(|x| coef * x).collect();
    let grad_context = f_v.iter().map(|x| coef * x).collect();
    let mut grad_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(neg, f_v);
        loss -= log_sigmoid(-s);
        let c = sigmoid(s);
        axpy(c, neg, &mut grad_focus);
        grad_negatives.push(f_v.iter().map(|x| c * x).collect());
    }
    PairLoss { loss, grad_focus, grad_context, grad_negatives }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, step: u64) {
    let bc1 = 1.0 - BETA1.powf(step as f64);
    let bc2 = 1.0 - BETA2.powf(step as f64);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

/// Adam moments for a single flat tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// Bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        adam_update(params, grads, &mut self.m, &mut self.v, lr, self.step);
        Ok(())
    }
}

struct SideMoments {
    /// (m, v) per tensor, aligned with [`SideParams::tensors`].
    tensors: Vec<(Vec<f64>, Vec<f64>)>,
}

impl SideMoments {
    fn new(params: &SideParams) -> Self {
        Self { tensors: params.tensors().iter().map(|t| (vec![0.0; t.len()], vec![0.0; t.len()])).collect() }
    }
}

/// Adam over a whole model. Table rows without a gradient in the current
/// batch keep both their values and their moments.
pub struct ModelOptimizer {
    step: u64,
    focus: SideMoments,
    context: SideMoments,
}

impl ModelOptimizer {
    pub fn new(model: &EncoderModel) -> Self {
        Self { step: 0, focus: SideMoments::new(&model.focus), context: SideMoments::new(&model.context) }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, model: &mut EncoderModel, grads: &ModelGrads, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        let step = self.step;
        let d = model.dim;
        for (params, moments, g) in [
            (&mut model.focus, &mut self.focus, &grads.focus),
            (&mut model.context, &mut self.context, &grads.context),
        ] {
            let dense = g.cell_tensors();
            let mut tensors = params.tensors_mut().into_iter();
            let mut slots = moments.tensors.iter_mut();
            let table = tensors.next().expect("table");
            let (tm, tv) = slots.next().expect("table moments");
            for (&row, rg) in &g.rows {
                let r = row as usize * d..(row as usize + 1) * d;
                adam_update(&mut table[r.clone()], rg, &mut tm[r.clone()], &mut tv[r], lr, step);
            }
            for ((p, (m, v)), gt) in tensors.zip(slots).zip(dense) {
                adam_update(p, gt, m, v, lr, step);
            }
        }
        Ok(())
    }
}

/// Nodes per backward work unit. Fixed so the gradient reduction order does
/// not depend on the thread count.
const BACKWARD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainStats {
    pub pair_count: usize,
    pub batch_count: usize,
    /// Mean pair loss of each batch, in training order.
    pub batch_losses: Vec<f64>,
    pub wall_time_secs: f64,
}

impl TrainStats {
    fn tail_mean(&self, from_end: bool) -> f64 {
        let n = self.batch_losses.len();
        let k = (n / 10).max(1).min(n);
        let slice = if from_end { &self.batch_losses[n - k..] } else { &self.batch_losses[..k] };
        slice.iter().sum::<f64>() / k as f64
    }

    /// Mean batch loss over the first 10% of batches.
    pub fn initial_mean_loss(&self) -> f64 {
        self.tail_mean(false)
    }

    /// Mean batch loss over the final 10% of batches.
    pub fn final_mean_loss(&self) -> f64 {
        self.tail_mean(true)
    }
}

pub struct TrainOutput {
    pub model: EncoderModel,
    pub walks: Vec<Walk>,
    pub stats: TrainStats,
}

/// Loss and summed parameter gradients of one batch.
pub fn batch_gradients<R: Rng + ?Sized>(
    model: &EncoderModel,
    inputs: &NodeInputs,
    batch: &[(NodeId, NodeId)],
    negatives_per_pair: usize,
    rng: &mut R,
    exec: Exec,
) -> Result<(f64, ModelGrads)> {
    let n = inputs.len();
    let mut slots: HashMap<(NodeId, Side), usize> = HashMap::new();
    let mut unique: Vec<(NodeId, Side)> = Vec::new();
    let mut slot = |key: (NodeId, Side)| {
        *slots.entry(key).or_insert_with(|| {
            unique.push(key);
            unique.len() - 1
        })
    };
    let mut plan = Vec::with_capacity(batch.len());
    for &(focus, context) in batch {
        let negs = sample_negatives(rng, n, negatives_per_pair, &[focus, context])?;
        let f = slot((focus, Side::Focus));
        let c = slot((context, Side::Context));
        let ns: Vec<usize> = negs.into_iter().map(|v| slot((v, Side::Context))).collect();
        plan.push((f, c, ns));
    }

    let forwards: Vec<(Vec<f64>, Trace)> = exec
        .map_slice(&unique, |&(v, side)| model.forward(side, inputs.get(v)))
        .into_iter()
        .collect::<Result<_>>()?;

    let mut upstream = vec![vec![0.0; model.dim]; unique.len()];
    let mut total = 0.0;
    for (f, c, ns) in &plan {
        let negs: Vec<&[f64]> = ns.iter().map(|&i| forwards[i].0.as_slice()).collect();
        let pl = pair_loss(&forwards[*f].0, &forwards[*c].0, &negs);
        total += pl.loss;
        crate::tensor::add_assign(&mut upstream[*f], &pl.grad_focus);
        crate::tensor::add_assign(&mut upstream[*c], &pl.grad_context);
        for (&i, g) in ns.iter().zip(&pl.grad_negatives) {
            crate::tensor::add_assign(&mut upstream[i], g);
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteGradient);
    }

    let order: Vec<usize> = (0..unique.len()).collect();
    let partials = exec.map_chunks(&order, BACKWARD_CHUNK, |chunk| {
        let mut g = ModelGrads::zeros_like(model);
        for &i in chunk {
            let side = unique[i].1;
            model.backward(side, &forwards[i].1, &upstream[i], g.side_mut(side));
        }
        g
    });
    let mut grads = ModelGrads::zeros_like(model);
    for p in &partials {
        grads.add_assign(p);
    }
    Ok((total / batch.len() as f64, grads))
}

/// (focus, context) node pair.
pub type WalkPair = (NodeId, NodeId);

/// Walk pairs for `g` under `walk` settings, in generation order.
pub fn walk_pairs(g: &Graph, walk: &WalkConfig, seed: u64, exec: Exec) -> Result<(Vec<Walk>, Vec<WalkPair>)> {
    let tables = build_alias_tables(g, walk, exec)?;
    let walks = generate_walks(g, &tables, walk, seed, exec);
    let pairs = extract_pairs(&walks, walk.window);
    Ok((walks, pairs))
}

pub fn train(g: &Graph, kind: EncoderKind, cfg: &TrainConfig, exec: Exec) -> Result<TrainOutput> {
    let started = Instant::now();
    cfg.validate()?;
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let mut model = EncoderModel::for_graph(kind, cfg.dim, g, &mut seeding::rng(cfg.seed, seeding::INIT));
    let inputs = model.inputs(g)?;
    let (walks, mut pairs) = walk_pairs(g, &cfg.walk, cfg.seed, exec)?;
    log::info!("{} walks, {} pairs", walks.len(), pairs.len());

    let mut shuffle_rng = seeding::rng(cfg.seed, seeding::SHUFFLE);
    let mut neg_rng = seeding::rng(cfg.seed, seeding::NEGATIVES);
    let mut optimizer = ModelOptimizer::new(&model);
    let mut batch_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        pairs.shuffle(&mut shuffle_rng);
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, grads) = batch_gradients(&model, &inputs, batch, cfg.negatives_per_pair, &mut neg_rng, exec)?;
            optimizer.apply(&mut model, &grads, cfg.learning_rate)?;
            batch_losses.push(loss);
        }
        log::debug!("epoch {epoch}: last batch loss {:?}", batch_losses.last());
    }
    let stats = TrainStats {
        pair_count: pairs.len(),
        batch_count: batch_losses.len(),
        batch_losses,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    Ok(TrainOutput { model, walks, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pair_loss_at_zero_scores() {
        let f_v = [1.0, 0.0];
        let zero = [0.0, 1.0];
        let pl = pair_loss(&f_v, &zero, &[&zero, &zero]);
        assert!((pl.loss - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(pl.grad_context, vec![-0.5, 0.0]);
    }

    #[test]
    fn pair_loss_without_negatives() {
        let (f_v, f_u) = ([0.3, -0.2, 0.9], [1.1, 0.4, -0.5]);
        let pl = pair_loss(&f_v, &f_u, &[]);
        assert_eq!(pl.loss, -log_sigmoid(dot(&f_v, &f_u)));
        assert!(pl.grad_negatives.is_empty());
    }

    #[test]
    fn negatives_forced_and_exhausted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = sample_negatives(&mut rng, 3, 1, &[NodeId(0), NodeId(1)]).unwrap();
        assert_eq!(draws, vec![NodeId(2)]);
        for _ in 0..50 {
            assert_eq!(sample_negatives(&mut rng, 3, 1, &[NodeId(2), NodeId(0)]).unwrap(), vec![NodeId(1)]);
        }
        let all = [NodeId(0), NodeId(1), NodeId(2)];
        assert!(matches!(sample_negatives(&mut rng, 3, 1, &all), Err(Error::NotEnoughNodes { .. })));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut state = AdamState::new(3);
        let mut p = vec![1.0, 1.0, 1.0];
        state.step(&mut p, &[0.5, -2.0, 0.0], 0.01).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
        assert_eq!(p[2], 1.0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.3, -0.7];
        state.step(&mut p, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
        assert_eq!(state.step, 1);
        assert!(matches!(state.step(&mut p, &[f64::NAN, 0.0], 0.1), Err(Error::NonFiniteGradient)));
    }

    #[test]
    fn config_problems_are_collected() {
        let cfg = TrainConfig {
            dim: 0,
            batch_size: 0,
            learning_rate: -1.0,
            walk: WalkConfig { window: 1, ..Default::default() },
            ..Default::default()
        };
        match cfg.validate() {
            Err(Error::InvalidConfig(p)) => assert_eq!(p.len(), 4, "{p:?}"),
            other => panic!("{:?}", other.err()),
        }
    }
}
