//! Offline double DQN over raw states or frozen world-model latents.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::envs::{TabularMdp, TransitionRecord};
use crate::error::{Error, Result};
use crate::geometry::{LatentPoint, Metric};
use crate::model::{encodings, Mlp, ModelBundle};
use crate::training::{clip_gradients, rmsprop_step, OptimizerState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    pub sync_interval: usize,
    pub steps: usize,
    pub hidden: Vec<usize>,
    /// Loss weight of imagined tuples relative to logged ones.
    pub synthetic_weight: f64,
    /// Fraction of valid state-action pairs in the offline dataset.
    pub coverage: f64,
    /// Greedy evaluation period, in gradient steps.
    pub eval_every: usize,
    /// Width of the running-average window, in gradient steps.
    pub running_window: usize,
    pub max_steps: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            gamma: 0.95,
            batch_size: 64,
            learning_rate: 1e-4,
            clip_norm: 0.5,
            rho: 0.99,
            momentum: 0.9,
            eps: 1e-8,
            sync_interval: 500,
            steps: 20_000,
            hidden: vec![64, 64],
            synthetic_weight: 1.0,
            coverage: 0.8,
            eval_every: 20,
            running_window: 100,
            max_steps: 100,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("rl.gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.batch_size == 0 || self.steps == 0 || self.sync_interval == 0 || self.eval_every == 0 {
            return Err(Error::invalid("rl batch_size, steps, sync_interval and eval_every must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) || !(self.eps > 0.0) {
            return Err(Error::invalid("rl learning_rate, clip_norm and eps must be > 0"));
        }
        if !(0.0..1.0).contains(&self.rho) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("rl rho and momentum must lie in [0, 1)"));
        }
        if !(self.synthetic_weight >= 0.0 && self.synthetic_weight.is_finite()) {
            return Err(Error::invalid("rl.synthetic_weight must be finite and >= 0"));
        }
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(Error::invalid(format!("rl.coverage must lie in (0, 1], got {}", self.coverage)));
        }
        if self.hidden.contains(&0) || self.max_steps == 0 {
            return Err(Error::invalid("rl hidden widths and max_steps must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTransition {
    pub z: LatentPoint,
    pub a: usize,
    pub r: f64,
    pub z_next: LatentPoint,
    pub done: bool,
    pub synthetic: bool,
}

/// Every logged tuple in latent form, followed by one imagined tuple per action
/// from the same start latent. Imagined tuples take the termination flag of the
/// logged next state whose latent is nearest to the prediction.
pub fn augment_synthetic(
    dataset: &[TransitionRecord],
    bundle: &ModelBundle,
    mdp: &TabularMdp,
) -> Result<Vec<LatentTransition>> {
    if dataset.is_empty() {
        return Ok(Vec::new());
    }
    let s: Vec<usize> = dataset.iter().map(|r| r.s).collect();
    let sn: Vec<usize> = dataset.iter().map(|r| r.s_next).collect();
    let z = bundle.encode_rows(&encodings(mdp, &s)?)?;
    let zn = bundle.encode_rows(&encodings(mdp, &sn)?)?;
    let done: Vec<bool> = sn.iter().map(|&x| mdp.is_terminal(x)).collect();

    let na = bundle.n_actions();
    let starts: Vec<&LatentPoint> = z.iter().flat_map(|p| std::iter::repeat(p).take(na)).collect();
    let actions: Vec<usize> = (0..dataset.len()).flat_map(|_| 0..na).collect();
    let preds = bundle.predict_next_many(&starts, &actions)?;
    let rewards = bundle.predict_reward_many(&starts, &actions)?;

    let space = bundle.space();
    let mut out = Vec::with_capacity(dataset.len() * (1 + na));
    for (i, rec) in dataset.iter().enumerate() {
        out.push(LatentTransition {
            z: z[i].clone(),
            a: rec.a,
            r: rec.r,
            z_next: zn[i].clone(),
            done: done[i],
            synthetic: false,
        });
    }
    for (j, pred) in preds.into_iter().enumerate() {
        let mut best = (f64::INFINITY, false);
        for (k, cand) in zn.iter().enumerate() {
            let d = space.distance(&pred, cand, Metric::L2)?;
            if d < best.0 {
                best = (d, done[k]);
            }
        }
        out.push(LatentTransition {
            z: z[j / na].clone(),
            a: actions[j],
            r: rewards[j],
            z_next: pred,
            done: best.1,
            synthetic: true,
        });
    }
    Ok(out)
}

/// One training tuple over arbitrary input features.
#[derive(Debug, Clone, PartialEq)]
pub struct QTuple {
    pub x: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub x_next: Vec<f64>,
    pub done: bool,
    pub weight: f64,
}

/// Raw-state tuples: the environment's one-hot encodings as features.
pub fn raw_tuples(dataset: &[TransitionRecord], mdp: &TabularMdp) -> Vec<QTuple> {
    dataset
        .iter()
        .map(|r| QTuple {
            x: mdp.encode(r.s).to_vec(),
            a: r.a,
            r: r.r,
            x_next: mdp.encode(r.s_next).to_vec(),
            done: mdp.is_terminal(r.s_next),
            weight: 1.0,
        })
        .collect()
}

/// Latent tuples featurized the way the transition net sees them.
pub fn latent_tuples(
    transitions: &[LatentTransition],
    bundle: &ModelBundle,
    synthetic_weight: f64,
) -> Result<Vec<QTuple>> {
    let zs: Vec<&LatentPoint> = transitions.iter().map(|t| &t.z).collect();
    let zn: Vec<&LatentPoint> = transitions.iter().map(|t| &t.z_next).collect();
    let f = bundle.feature_rows(&zs)?;
    let fnext = bundle.feature_rows(&zn)?;
    Ok(transitions
        .iter()
        .enumerate()
        .map(|(i, t)| QTuple {
            x: f.row_slice(i).to_vec(),
            a: t.a,
            r: t.r,
            x_next: fnext.row_slice(i).to_vec(),
            done: t.done,
            weight: if t.synthetic { synthetic_weight } else { 1.0 },
        })
        .collect())
}

/// Online and target Q-networks sharing one architecture.
#[derive(Debug, Clone)]
pub struct QNetwork {
    net: Mlp,
    pub online: ParamStore,
    pub target: ParamStore,
    n_actions: usize,
}

impl QNetwork {
    pub fn new(input_dim: usize, hidden: &[usize], n_actions: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut online = ParamStore::new();
        let net = Mlp::new(&mut online, "q", input_dim, hidden, n_actions, &mut rng)?;
        Ok(QNetwork {
            net,
            target: online.clone(),
            online,
            n_actions,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn eval(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone())?;
        let q = self.net.forward(&mut tape, store, xv)?;
        Ok(tape.value(q).clone())
    }

    /// Online Q-values, one row per input row.
    pub fn q_values(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(&self.online, x)
    }

    pub fn target_q_values(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(&self.target, x)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `r + gamma * Q_target(x', argmax_a Q_online(x', a))`, zero bootstrap at terminal next states.
pub fn double_q_targets(q: &QNetwork, batch: &[&QTuple], gamma: f64) -> Result<Vec<f64>> {
    let dim = q.input_dim();
    let xn = Tensor::new(batch.len(), dim, batch.iter().flat_map(|t| t.x_next.iter().copied()).collect())?;
    let online = q.q_values(&xn)?;
    let target = q.target_q_values(&xn)?;
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done {
                t.r
            } else {
                let a_star = argmax(online.row_slice(i));
                t.r + gamma * target.row_slice(i)[a_star]
            }
        })
        .collect())
}

/// Train online/target Q-networks on a fixed set of tuples. `on_eval` runs after
/// every `eval_every` steps with the current network.
pub fn ddqn_train(
    tuples: &[QTuple],
    n_actions: usize,
    cfg: &RlConfig,
    seed: u64,
    mut on_eval: impl FnMut(usize, &QNetwork) -> Result<()>,
) -> Result<QNetwork> {
    cfg.validate()?;
    let Some(first) = tuples.first() else {
        return Err(Error::invalid("no tuples to train on"));
    };
    let dim = first.x.len();
    if let Some(bad) = tuples
        .iter()
        .find(|t| t.x.len() != dim || t.x_next.len() != dim || t.a >= n_actions)
    {
        return Err(Error::contract(format!(
            "tuple with {} / {} features and action {} (expected {dim} features, {n_actions} actions)",
            bad.x.len(),
            bad.x_next.len(),
            bad.a
        )));
    }
    let mut q = QNetwork::new(dim, &cfg.hidden, n_actions, seed)?;
    let mut state = OptimizerState::new(&q.online, cfg.rho, cfg.momentum, cfg.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);

    let b = cfg.batch_size;
    for step in 1..=cfg.steps {
        let batch: Vec<&QTuple> = (0..b).map(|_| &tuples[rng.gen_range(0..tuples.len())]).collect();
        let y = double_q_targets(&q, &batch, cfg.gamma)?;
        let w: Vec<f64> = batch.iter().map(|t| t.weight).collect();
        let wsum: f64 = w.iter().sum();
        if wsum <= 0.0 {
            continue;
        }
        let x = Tensor::new(b, dim, batch.iter().flat_map(|t| t.x.iter().copied()).collect())?;
        let pick: Vec<usize> = batch.iter().enumerate().map(|(i, t)| i * n_actions + t.a).collect();

        let mut tape = Tape::new();
        let diverged = |e: Error| match e {
            Error::Numerical { op } => Error::Diverged {
                step,
                detail: format!("non-finite value from `{op}` in TD loss"),
            },
            other => other,
        };
        let loss = (|| {
            let xv = tape.constant(x)?;
            let qv = q.net.forward(&mut tape, &q.online, xv)?;
            let flat = tape.reshape(qv, b * n_actions, 1)?;
            let chosen = tape.gather_rows(flat, &pick)?;
            let yv = tape.constant(Tensor::column(y))?;
            let err = tape.sub(chosen, yv)?;
            let sq = tape.square(err)?;
            let wv = tape.constant(Tensor::column(w))?;
            let weighted = tape.mul(sq, wv)?;
            let total = tape.sum(weighted)?;
            tape.scale(total, 1.0 / wsum)
        })()
        .map_err(diverged)?;
        let mut grads = tape.backward(loss, &q.online).map_err(diverged)?;
        clip_gradients(&mut grads, cfg.clip_norm)?;
        rmsprop_step(&mut state, &mut q.online, &grads, cfg.learning_rate)?;
        if step % cfg.sync_interval == 0 {
            q.sync_target();
        }
        if step % cfg.eval_every == 0 {
            on_eval(step, &q)?;
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnStats {
    /// Undiscounted return per initial state.
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Standard error of the mean over initial states.
    pub std_error: f64,
}

impl ReturnStats {
    pub fn from_returns(returns: Vec<f64>) -> Self {
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std_error = if returns.len() > 1 {
            (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        ReturnStats {
            returns,
            mean,
            std_error,
        }
    }
}

/// Greedy rollouts from every initial state using a per-state Q table; −1 per
/// step until a terminal state or `max_steps`.
pub fn evaluate_q_table(mdp: &TabularMdp, q: &[Vec<f64>], max_steps: usize) -> Result<ReturnStats> {
    if q.len() != mdp.n_states() {
        return Err(Error::contract(format!("Q table has {} rows for {} states", q.len(), mdp.n_states())));
    }
    if mdp.initial_states().is_empty() {
        return Err(Error::contract("MDP has no initial states"));
    }
    let returns = mdp
        .initial_states()
        .iter()
        .map(|&s0| {
            let mut s = s0;
            let mut ret = 0.0;
            for _ in 0..max_steps {
                if mdp.is_terminal(s) {
                    break;
                }
                let a = argmax(&q[s]);
                ret += mdp.reward(s, a);
                s = mdp.next_state(s, a);
            }
            ret
        })
        .collect();
    Ok(ReturnStats::from_returns(returns))
}

/// Greedy evaluation of `qnet` where `features` holds one input row per MDP state.
pub fn evaluate_policy(mdp: &TabularMdp, features: &Tensor, qnet: &QNetwork, max_steps: usize) -> Result<ReturnStats> {
    if features.rows() != mdp.n_states() {
        return Err(Error::contract(format!(
            "{} feature rows for {} states",
            features.rows(),
            mdp.n_states()
        )));
    }
    let q = qnet.q_values(features)?;
    let table: Vec<Vec<f64>> = (0..q.rows()).map(|r| q.row_slice(r).to_vec()).collect();
    evaluate_q_table(mdp, &table, max_steps)
}

/// Input rows for every state: raw encodings, or featurized latents when a bundle is given.
pub fn state_features(mdp: &TabularMdp, bundle: Option<&ModelBundle>) -> Result<Tensor> {
    let all: Vec<usize> = (0..mdp.n_states()).collect();
    match bundle {
        None => encodings(mdp, &all),
        Some(b) => {
            let z = b.encode_all(mdp)?;
            b.feature_rows(&z.iter().collect::<Vec<_>>())
        }
    }
}

/// Optimal action values by value iteration; invalid pairs get `-inf`.
pub fn value_iteration(mdp: &TabularMdp, gamma: f64, tol: f64, max_iters: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; ns];
    let mut q = vec![vec![f64::NEG_INFINITY; na]; ns];
    for _ in 0..max_iters {
        let mut delta: f64 = 0.0;
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                if mdp.is_valid_pair(s, a) {
                    let sn = mdp.next_state(s, a);
                    let boot = if mdp.is_terminal(sn) { 0.0 } else { v[sn] };
                    q[s][a] = mdp.reward(s, a) + gamma * boot;
                }
            }
            let nv = q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((nv - v[s]).abs());
            v[s] = nv;
        }
        if delta < tol {
            break;
        }
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReturnRow {
    pub step: usize,
    pub ret: f64,
    pub running_avg: f64,
}

/// Evaluation returns with a trailing running average over `window` steps.
pub fn running_average(points: &[(usize, f64)], window: usize) -> Vec<ReturnRow> {
    points
        .iter()
        .map(|&(step, ret)| {
            let lo = step.saturating_sub(window);
            let inside: Vec<f64> = points
                .iter()
                .filter(|&&(s, _)| s > lo && s <= step)
                .map(|&(_, r)| r)
                .collect();
            ReturnRow {
                step,
                ret,
                running_avg: inside.iter().sum::<f64>() / inside.len() as f64,
            }
        })
        .collect()
}

/// `seed,step,return,running_avg` rows, optionally tagged by agent.
pub fn write_returns_csv(path: impl AsRef<Path>, rows: &[(String, u64, ReturnRow)]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record(["agent", "seed", "step", "return", "running_avg"])?;
    for (agent, seed, r) in rows {
        w.write_record([
            agent.clone(),
            seed.to_string(),
            r.step.to_string(),
            r.ret.to_string(),
            r.running_avg.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{grid_state, make_grid_orient, make_torus, WallMode};
    use crate::geometry::LatentSpaceSpec;
    use crate::model::{MaskTable, ModelConfig};

    fn quick_cfg() -> RlConfig {
        RlConfig {
            learning_rate: 3e-3,
            steps: 1500,
            batch_size: 16,
            sync_interval: 50,
            hidden: vec![16],
            ..RlConfig::default()
        }
    }

    #[test]
    fn augmentation_counts_and_definition() {
        let mdp = make_torus(5).unwrap().with_goal(&[24]).unwrap();
        let b = ModelBundle::for_mdp(&mdp, LatentSpaceSpec::circles(2), MaskTable::empty(2), ModelConfig::default(), 3)
            .unwrap();
        let data: Vec<_> = (0..10).map(|s| mdp.record(s, s % 2)).collect();
        let aug = augment_synthetic(&data, &b, &mdp).unwrap();
        assert_eq!(aug.len(), 10 * (1 + 2));
        assert_eq!(aug.iter().filter(|t| t.synthetic).count(), 20);
        for t in aug.iter().filter(|t| t.synthetic) {
            let delta = b.delta(&t.z, t.a).unwrap();
            let expected = b.space().oplus(&t.z, &delta).unwrap();
            assert_eq!(expected, t.z_next);
        }
    }

    #[test]
    fn gamma_zero_regresses_rewards() {
        let tuples: Vec<QTuple> = (0..4)
            .map(|i| QTuple {
                x: vec![(i / 2) as f64, 1.0 - (i / 2) as f64],
                a: i % 2,
                r: [-1.0, 0.5, 2.0, 0.0][i],
                x_next: vec![0.0, 0.0],
                done: false,
                weight: 1.0,
            })
            .collect();
        let cfg = RlConfig { gamma: 0.0, ..quick_cfg() };
        let q = ddqn_train(&tuples, 2, &cfg, 1, |_, _| Ok(())).unwrap();
        for t in &tuples {
            let v = q.q_values(&Tensor::row(t.x.clone())).unwrap();
            assert!((v.row_slice(0)[t.a] - t.r).abs() < 0.05, "{} vs {}", v.row_slice(0)[t.a], t.r);
        }
    }

    #[test]
    fn zero_reward_terminal_data_gives_zero_q() {
        let tuples: Vec<QTuple> = (0..6)
            .map(|i| QTuple {
                x: vec![i as f64 / 6.0, 1.0],
                a: i % 3,
                r: 0.0,
                x_next: vec![0.3, 0.3],
                done: true,
                weight: 1.0,
            })
            .collect();
        let q = ddqn_train(&tuples, 3, &quick_cfg(), 2, |_, _| Ok(())).unwrap();
        for t in &tuples {
            let v = q.q_values(&Tensor::row(t.x.clone())).unwrap();
            assert!(v.row_slice(0)[t.a].abs() < 0.05);
        }
    }

    #[test]
    fn double_q_target_is_bounded() {
        let q = QNetwork::new(2, &[8], 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tuples: Vec<QTuple> = (0..50)
            .map(|_| QTuple {
                x: vec![0.0, 0.0],
                a: 0,
                r: rng.gen_range(-2.0..2.0),
                x_next: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                done: rng.gen_bool(0.2),
                weight: 1.0,
            })
            .collect();
        let refs: Vec<&QTuple> = tuples.iter().collect();
        let y = double_q_targets(&q, &refs, 1.0).unwrap();
        for (t, y) in tuples.iter().zip(y) {
            let tq = q.target_q_values(&Tensor::row(t.x_next.clone())).unwrap();
            let max = tq.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(y <= max + t.r.abs() + 1e-12);
        }
    }

    #[test]
    fn value_iteration_policy_is_shortest_path() {
        for mdp in [
            make_grid_orient(3, Some((2, 2)), WallMode::Selfloop).unwrap(),
            make_torus(3).unwrap().with_goal(&[8]).unwrap(),
        ] {
            let q = value_iteration(&mdp, 0.95, 1e-12, 10_000);
            let stats = evaluate_q_table(&mdp, &q, 100).unwrap();
            for (&s, &r) in mdp.initial_states().iter().zip(&stats.returns) {
                assert_eq!(r, -(mdp.shortest_path_to_goal(s).unwrap() as f64));
            }
        }
    }

    #[test]
    fn goal_adjacent_state_returns_minus_one() {
        let mdp = make_grid_orient(3, Some((2, 2)), WallMode::Selfloop).unwrap();
        let q = value_iteration(&mdp, 0.95, 1e-12, 10_000);
        let s = grid_state(3, 2, 1, 0); // facing north, one cell below the goal
        let a = argmax(&q[s]);
        assert!(mdp.is_terminal(mdp.next_state(s, a)));
        let idx = mdp.initial_states().iter().position(|&x| x == s).unwrap();
        assert_eq!(evaluate_q_table(&mdp, &q, 100).unwrap().returns[idx], -1.0);
    }

    #[test]
    fn untrained_q_is_far_from_optimal() {
        let mdp = make_grid_orient(5, Some((4, 4)), WallMode::Selfloop).unwrap();
        let feats = state_features(&mdp, None).unwrap();
        let q = QNetwork::new(feats.cols(), &[64, 64], 2, 0).unwrap();
        let stats = evaluate_policy(&mdp, &feats, &q, 100).unwrap();
        let opt = evaluate_q_table(&mdp, &value_iteration(&mdp, 0.95, 1e-12, 10_000), 100).unwrap();
        assert!(stats.mean < opt.mean - 10.0);
    }

    #[test]
    fn ddqn_is_deterministic() {
        let mdp = make_torus(3).unwrap().with_goal(&[8]).unwrap();
        let data: Vec<_> = mdp.valid_pairs().into_iter().map(|(s, a)| mdp.record(s, a)).collect();
        let tuples = raw_tuples(&data, &mdp);
        let cfg = RlConfig { steps: 100, ..quick_cfg() };
        let a = ddqn_train(&tuples, 2, &cfg, 5, |_, _| Ok(())).unwrap();
        let b = ddqn_train(&tuples, 2, &cfg, 5, |_, _| Ok(())).unwrap();
        assert_eq!(a.online, b.online);
    }

    #[test]
    fn running_average_window() {
        let pts = [(20, -10.0), (40, -6.0), (60, -2.0), (140, -4.0)];
        let rows = running_average(&pts, 100);
        assert_eq!(rows[0].running_avg, -10.0);
        assert_eq!(rows[2].running_avg, -6.0);
        assert_eq!(rows[3].running_avg, -3.0);
    }
}
