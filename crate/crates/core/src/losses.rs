//! Training objective terms, built as tape expressions.
//!
//! All latent distances are taken in the structured space: circular
//! differences are reduced to `[-k/2, k/2)` before the norm.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{LatentSpaceSpec, Metric};
use crate::model::MaskTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub temperature: f64,
    /// Hinge threshold `w` of the volume term.
    pub hinge: f64,
    /// Strength `C` of the entropy baseline term.
    pub entropy_c: f64,
    pub metric: Metric,
    /// Use the two-sided contrastive term.
    pub symmetrized: bool,
    /// Draw negatives only from records with the same action.
    pub action_negatives: bool,
    pub infonce: f64,
    pub reward: f64,
    pub volume: f64,
    pub disentangle: f64,
    pub entropy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            temperature: 1.0,
            hinge: 4.0,
            entropy_c: 1.0,
            metric: Metric::L2,
            symmetrized: false,
            action_negatives: true,
            infonce: 1.0,
            reward: 1.0,
            volume: 1.0,
            disentangle: 1.0,
            entropy: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.hinge >= 0.0) {
            return Err(Error::invalid("hinge threshold must be >= 0"));
        }
        if !(self.entropy_c > 0.0) {
            return Err(Error::invalid("entropy constant must be positive"));
        }
        let w = [self.infonce, self.reward, self.volume, self.disentangle, self.entropy];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Tape nodes and labels for one minibatch.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    /// `M x d` encodings of `s_t`.
    pub z: Var,
    /// `M x d` encodings of `s_{t+1}`.
    pub z_next: Var,
    /// `M x d` predictions `z ⊕ Δ`.
    pub z_pred: Var,
    /// `M x d` transition deltas.
    pub delta: Var,
    /// `M x 1` predicted rewards.
    pub reward_pred: Var,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

/// Weighted contribution of each term; the fields sum to `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub infonce: f64,
    pub reward: f64,
    pub volume: f64,
    pub disentangle: f64,
    pub entropy: f64,
}

/// Record indices per action, in increasing action order.
pub fn group_by_action(actions: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in actions.iter().enumerate() {
        groups.entry(a).or_default().push(i);
    }
    groups
}

fn shift_row(space: &LatentSpaceSpec, sign: f64) -> Tensor {
    Tensor::row(space.moduli().iter().map(|m| m.map_or(0.0, |k| sign * 0.5 * k)).collect())
}

/// Signed differences `a - b`, circular columns reduced to `[-k/2, k/2)`.
fn wrapped_diff(tape: &mut Tape, space: &LatentSpaceSpec, a: Var, b: Var) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    if !space.has_circles() {
        return Ok(diff);
    }
    let up = tape.constant(shift_row(space, 1.0))?;
    let down = tape.constant(shift_row(space, -1.0))?;
    let shifted = tape.add_bias(diff, up)?;
    let wrapped = tape.wrap_passthrough(shifted, space.moduli())?;
    tape.add_bias(wrapped, down)
}

/// Row-wise distance between equally shaped `a` and `b`, `n x 1`.
pub fn paired_distance(tape: &mut Tape, space: &LatentSpaceSpec, a: Var, b: Var, metric: Metric) -> Result<Var> {
    let diff = wrapped_diff(tape, space, a, b)?;
    match metric {
        Metric::L1 => {
            let abs = tape.abs(diff)?;
            tape.row_sum(abs)
        }
        Metric::L2 => {
            let sq = tape.square(diff)?;
            let s = tape.row_sum(sq)?;
            tape.sqrt(s)
        }
    }
}

/// Distances between rows `rows` of `anchors` and rows `cols` of `cands`, `|rows| x |cols|`.
fn pairwise_distance(
    tape: &mut Tape,
    space: &LatentSpaceSpec,
    anchors: Var,
    cands: Var,
    rows: &[usize],
    cols: &[usize],
    metric: Metric,
) -> Result<Var> {
    let ai: Vec<usize> = rows.iter().flat_map(|&r| std::iter::repeat(r).take(cols.len())).collect();
    let ci: Vec<usize> = rows.iter().flat_map(|_| cols.iter().copied()).collect();
    let a = tape.gather_rows(anchors, &ai)?;
    let c = tape.gather_rows(cands, &ci)?;
    let d = paired_distance(tape, space, a, c, metric)?;
    tape.reshape(d, rows.len(), cols.len())
}

/// Mean over `rows` of `-log softmax` of the positive candidate.
#[allow(clippy::too_many_arguments)]
fn contrastive_rows(
    tape: &mut Tape,
    space: &LatentSpaceSpec,
    anchors: Var,
    cands: Var,
    rows: &[usize],
    cols: &[usize],
    positive: &[usize],
    metric: Metric,
    temperature: f64,
) -> Result<Var> {
    let d = pairwise_distance(tape, space, anchors, cands, rows, cols, metric)?;
    let logits = tape.scale(d, -1.0 / temperature)?;
    let lse = tape.logsumexp(logits)?;
    let flat = tape.reshape(d, rows.len() * cols.len(), 1)?;
    let pos_idx: Vec<usize> = positive.iter().enumerate().map(|(r, &p)| r * cols.len() + p).collect();
    let pos = tape.gather_rows(flat, &pos_idx)?;
    let pos = tape.scale(pos, 1.0 / temperature)?;
    let per_row = tape.add(pos, lse)?;
    tape.mean(per_row)
}

/// Row/column layout of the contrastive term for one action group.
struct GroupLayout {
    rows: Vec<usize>,
    cols: Vec<usize>,
    positive: Vec<usize>,
}

fn layouts(actions: &[usize], action_negatives: bool) -> Vec<GroupLayout> {
    let all: Vec<usize> = (0..actions.len()).collect();
    if !action_negatives {
        return vec![GroupLayout {
            rows: all.clone(),
            positive: all.clone(),
            cols: all,
        }];
    }
    group_by_action(actions)
        .into_values()
        .flat_map(|members| {
            if members.len() >= 2 {
                vec![GroupLayout {
                    positive: (0..members.len()).collect(),
                    rows: members.clone(),
                    cols: members,
                }]
            } else {
                // singleton group: every other batch record is a negative
                let i = members[0];
                vec![GroupLayout {
                    rows: vec![i],
                    cols: all.clone(),
                    positive: vec![i],
                }]
            }
        })
        .collect()
}

fn mean_of(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, 1.0 / terms.len() as f64)
}

fn check_batch(tape: &Tape, a: Var, b: Var, actions: &[usize]) -> Result<()> {
    let (ta, tb) = (tape.value(a), tape.value(b));
    if actions.is_empty() || ta.rows() == 0 {
        return Err(Error::contract("empty batch"));
    }
    if ta.shape() != tb.shape() || ta.rows() != actions.len() {
        return Err(Error::contract(format!(
            "batch shapes disagree: {:?}, {:?}, {} actions",
            ta.shape(),
            tb.shape(),
            actions.len()
        )));
    }
    Ok(())
}

/// Contrastive loss: each prediction against its true next latent, with the
/// true next latents of the other records of the same action as negatives.
/// Groups are averaged with equal weight.
pub fn infonce_loss(
    tape: &mut Tape,
    space: &LatentSpaceSpec,
    z_pred: Var,
    z_next: Var,
    actions: &[usize],
    metric: Metric,
    temperature: f64,
    action_negatives: bool,
) -> Result<Var> {
    check_batch(tape, z_pred, z_next, actions)?;
    let mut terms = Vec::new();
    for g in layouts(actions, action_negatives) {
        terms.push(contrastive_rows(
            tape,
            space,
            z_pred,
            z_next,
            &g.rows,
            &g.cols,
            &g.positive,
            metric,
            temperature,
        )?);
    }
    mean_of(tape, &terms)
}

/// Average of the forward term and the reverse term, where the true next
/// latent is the anchor and other predictions are the negatives.
pub fn symmetrized_infonce(
    tape: &mut Tape,
    space: &LatentSpaceSpec,
    z_pred: Var,
    z_next: Var,
    actions: &[usize],
    metric: Metric,
    temperature: f64,
    action_negatives: bool,
) -> Result<Var> {
    let fwd = infonce_loss(tape, space, z_pred, z_next, actions, metric, temperature, action_negatives)?;
    let bwd = infonce_loss(tape, space, z_next, z_pred, actions, metric, temperature, action_negatives)?;
    let s = tape.add(fwd, bwd)?;
    tape.scale(s, 0.5)
}

/// Mean squared error of the reward head.
pub fn reward_loss(tape: &mut Tape, reward_pred: Var, rewards: &[f64]) -> Result<Var> {
    let t = tape.value(reward_pred);
    if t.shape() != [rewards.len(), 1] {
        return Err(Error::contract(format!(
            "reward predictions {:?} vs {} rewards",
            t.shape(),
            rewards.len()
        )));
    }
    let target = tape.constant(Tensor::column(rewards.to_vec()))?;
    let diff = tape.sub(reward_pred, target)?;
    let sq = tape.square(diff)?;
    tape.mean(sq)
}

/// Mean hinge `max(|z_next - z|_2 - w, 0)` in the structured space.
pub fn volume_loss(tape: &mut Tape, space: &LatentSpaceSpec, z: Var, z_next: Var, hinge: f64) -> Result<Var> {
    if hinge < 0.0 {
        return Err(Error::invalid("hinge threshold must be >= 0"));
    }
    let d = paired_distance(tape, space, z_next, z, Metric::L2)?;
    let shifted = tape.shift(d, -hinge)?;
    let h = tape.relu(shifted)?;
    tape.mean(h)
}

/// Mean over records of the L1 norm of the masked delta components.
pub fn disentangle_loss(tape: &mut Tape, delta: Var, actions: &[usize], masks: &MaskTable) -> Result<Var> {
    let t = tape.value(delta);
    let (rows, d) = (t.rows(), t.cols());
    if rows != actions.len() {
        return Err(Error::contract("delta rows and actions disagree"));
    }
    if let Some(bad) = masks.as_lists().iter().flatten().find(|&&c| c >= d) {
        return Err(Error::contract(format!("mask coordinate {bad} out of range for dimension {d}")));
    }
    let ind = tape.constant(masks.indicator(actions, d))?;
    let masked = tape.mul(delta, ind)?;
    let abs = tape.abs(masked)?;
    let s = tape.sum(abs)?;
    tape.scale(s, 1.0 / rows as f64)
}

/// One partner `j != i` for every record `i`, drawn uniformly.
pub fn sample_distinct_pairs<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(Error::contract("entropy term needs at least 2 records"));
    }
    Ok((0..n)
        .map(|i| {
            let j = rng.gen_range(0..n - 1);
            (i, if j >= i { j + 1 } else { j })
        })
        .collect())
}

/// Mean of `exp(-C d(z_x, z_y))` over the given pairs.
pub fn entropy_loss(
    tape: &mut Tape,
    space: &LatentSpaceSpec,
    z: Var,
    pairs: &[(usize, usize)],
    c: f64,
    metric: Metric,
) -> Result<Var> {
    if tape.value(z).rows() < 2 || pairs.is_empty() {
        return Err(Error::contract("entropy term needs at least 2 records"));
    }
    let xi: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let yi: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let zx = tape.gather_rows(z, &xi)?;
    let zy = tape.gather_rows(z, &yi)?;
    let d = paired_distance(tape, space, zx, zy, metric)?;
    let s = tape.scale(d, -c)?;
    let e = tape.exp(s)?;
    tape.mean(e)
}

/// Weighted sum of the enabled terms plus its breakdown.
pub fn total_loss<R: Rng>(
    tape: &mut Tape,
    space: &LatentSpaceSpec,
    batch: &LatentBatch,
    weights: &LossWeights,
    masks: &MaskTable,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let mut parts: Vec<(Var, f64, fn(&mut LossBreakdown) -> &mut f64)> = Vec::new();
    if weights.infonce > 0.0 {
        let f = if weights.symmetrized {
            symmetrized_infonce
        } else {
            infonce_loss
        };
        let v = f(
            tape,
            space,
            batch.z_pred,
            batch.z_next,
            &batch.actions,
            weights.metric,
            weights.temperature,
            weights.action_negatives,
        )?;
        parts.push((v, weights.infonce, |b| &mut b.infonce));
    }
    if weights.reward > 0.0 {
        let v = reward_loss(tape, batch.reward_pred, &batch.rewards)?;
        parts.push((v, weights.reward, |b| &mut b.reward));
    }
    if weights.volume > 0.0 {
        let v = volume_loss(tape, space, batch.z, batch.z_next, weights.hinge)?;
        parts.push((v, weights.volume, |b| &mut b.volume));
    }
    if weights.disentangle > 0.0 && !masks.is_empty() {
        let v = disentangle_loss(tape, batch.delta, &batch.actions, masks)?;
        parts.push((v, weights.disentangle, |b| &mut b.disentangle));
    }
    if weights.entropy > 0.0 {
        let pairs = sample_distinct_pairs(batch.actions.len(), rng)?;
        let v = entropy_loss(tape, space, batch.z, &pairs, weights.entropy_c, weights.metric)?;
        parts.push((v, weights.entropy, |b| &mut b.entropy));
    }

    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Var> = None;
    for (v, w, field) in parts {
        let wv = if w == 1.0 { v } else { tape.scale(v, w)? };
        *field(&mut breakdown) = tape.value(wv).item();
        total = Some(match total {
            Some(t) => tape.add(t, wv)?,
            None => wv,
        });
    }
    let total = match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(0.0))?,
    };
    breakdown.total = tape.value(total).item();
    Ok((total, breakdown))
}
