//! World-model optimization: minibatch sampling, clipping and RMSProp with momentum.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamStore, Tape, Tensor};
use crate::envs::{DatasetSplit, TabularMdp, TransitionRecord};
use crate::error::{Error, Result};
use crate::eval::{ranking_eval, RankingReport};
use crate::geometry::LatentSpaceSpec;
use crate::losses::{total_loss, LatentBatch, LossBreakdown, LossWeights};
use crate::model::{MaskTable, ModelBundle, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub clip_norm: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            steps: 50_000,
            clip_norm: 0.5,
            rho: 0.99,
            momentum: 0.9,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid(format!("clip_norm must be > 0, got {}", self.clip_norm)));
        }
        if !(0.0..1.0).contains(&self.rho) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("rho and momentum must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("eps must be > 0"));
        }
        Ok(())
    }
}

/// Scale all gradients by `clip_norm / g` when their global norm `g` exceeds `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, clip_norm: f64) -> Result<f64> {
    if !(clip_norm > 0.0) {
        return Err(Error::invalid(format!("clip_norm must be > 0, got {clip_norm}")));
    }
    let g = grads.global_norm();
    if g > clip_norm {
        let s = clip_norm / g;
        for t in grads.tensors_mut() {
            t.scale_in_place(s);
        }
    }
    Ok(g)
}

/// Second-moment and momentum buffers, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub v: Vec<Tensor>,
    pub m: Vec<Tensor>,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, rho: f64, momentum: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        OptimizerState {
            v: zeros(),
            m: zeros(),
            rho,
            momentum,
            eps,
        }
    }

    pub fn from_config(store: &ParamStore, cfg: &OptimizerConfig) -> Self {
        Self::new(store, cfg.rho, cfg.momentum, cfg.eps)
    }
}

/// `v <- rho v + (1 - rho) g^2; m <- mu m + g / sqrt(v + eps); p <- p - lr m`.
pub fn rmsprop_step(state: &mut OptimizerState, params: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
    let n = params.iter().count();
    if state.v.len() != n || grads.tensors().len() != n {
        return Err(Error::contract(format!(
            "optimizer has {} buffers and {} gradients for {n} parameters",
            state.v.len(),
            grads.tensors().len()
        )));
    }
    let (rho, mu, eps) = (state.rho, state.momentum, state.eps);
    for (((p, g), v), m) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.v.iter_mut())
        .zip(state.m.iter_mut())
    {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::contract(format!(
                "parameter shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        for (((p, &g), v), m) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(v.data_mut())
            .zip(m.data_mut())
        {
            *v = rho * *v + (1.0 - rho) * g * g;
            *m = mu * *m + g / (*v + eps).sqrt();
            *p -= lr * *m;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub space: LatentSpaceSpec,
    pub masks: MaskTable,
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub eval_interval: usize,
}

impl TrainConfig {
    pub fn new(space: LatentSpaceSpec, masks: MaskTable) -> Self {
        TrainConfig {
            space,
            masks,
            model: ModelConfig::default(),
            losses: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            seed: 0,
            eval_interval: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.losses.validate()?;
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossRow {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub step: usize,
    pub split: String,
    pub hits_at_1: f64,
    pub hits_at_5: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunArtifacts {
    pub losses: Vec<LossRow>,
    pub metrics: Vec<MetricRow>,
}

impl RunArtifacts {
    /// `step,total,infonce,reward,volume,disentangle`
    pub fn write_losses_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_record(["step", "total", "infonce", "reward", "volume", "disentangle"])?;
        for r in &self.losses {
            let l = &r.losses;
            w.write_record([
                r.step.to_string(),
                l.total.to_string(),
                l.infonce.to_string(),
                l.reward.to_string(),
                l.volume.to_string(),
                l.disentangle.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `step,split,H@1,H@5,MRR`, metrics scaled by 100.
    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_record(["step", "split", "H@1", "H@5", "MRR"])?;
        for r in &self.metrics {
            w.write_record([
                r.step.to_string(),
                r.split.clone(),
                r.hits_at_1.to_string(),
                r.hits_at_5.to_string(),
                r.mrr.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// The last metric row logged for `split`.
    pub fn final_metrics(&self, split: &str) -> Option<&MetricRow> {
        self.metrics.iter().rev().find(|r| r.split == split)
    }

    /// Mean total loss over `range` of logged steps.
    pub fn mean_total(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.losses[range];
        rows.iter().map(|r| r.losses.total).sum::<f64>() / rows.len() as f64
    }
}

fn metric_row(step: usize, report: &RankingReport) -> Option<MetricRow> {
    Some(MetricRow {
        step,
        split: report.split.clone(),
        hits_at_1: report.hits_at_1?,
        hits_at_5: report.hits_at_5?,
        mrr: report.mrr?,
    })
}

fn evaluate(
    bundle: &ModelBundle,
    mdp: &TabularMdp,
    train_pairs: &BTreeSet<(usize, usize)>,
    heldout: Option<&BTreeSet<(usize, usize)>>,
    cfg: &TrainConfig,
    step: usize,
    out: &mut Vec<MetricRow>,
) -> Result<()> {
    let metric = cfg.losses.metric;
    let report = ranking_eval(bundle, mdp, train_pairs, metric, "train", cfg.seed)?;
    out.extend(metric_row(step, &report));
    if let Some(h) = heldout {
        let report = ranking_eval(bundle, mdp, h, metric, "test", cfg.seed)?;
        out.extend(metric_row(step, &report));
    }
    Ok(())
}

/// Train a freshly initialized world model on `dataset`.
///
/// Metrics are logged at step 0, every `eval_interval` steps and at the final step,
/// on the training pairs and, when `split` is given, on its held-out pairs.
pub fn train(
    cfg: &TrainConfig,
    dataset: &[TransitionRecord],
    mdp: &TabularMdp,
    split: Option<&DatasetSplit>,
) -> Result<(ModelBundle, RunArtifacts)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut bundle = ModelBundle::for_mdp(mdp, cfg.space.clone(), cfg.masks.clone(), cfg.model.clone(), cfg.seed)?;
    let artifacts = train_bundle(&mut bundle, cfg, dataset, mdp, split)?;
    Ok((bundle, artifacts))
}

/// Continue optimizing an existing bundle.
pub fn train_bundle(
    bundle: &mut ModelBundle,
    cfg: &TrainConfig,
    dataset: &[TransitionRecord],
    mdp: &TabularMdp,
    split: Option<&DatasetSplit>,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let opt = &cfg.optimizer;
    let mut state = OptimizerState::from_config(&bundle.store, opt);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let train_pairs: BTreeSet<(usize, usize)> = match split {
        Some(sp) => sp.train_pairs.clone(),
        None => dataset.iter().map(|r| (r.s, r.a)).collect(),
    };
    let heldout = split.map(|sp| &sp.heldout_pairs).filter(|h| !h.is_empty());

    let mut art = RunArtifacts {
        losses: Vec::with_capacity(opt.steps),
        metrics: Vec::new(),
    };
    evaluate(bundle, mdp, &train_pairs, heldout, cfg, 0, &mut art.metrics)?;

    let m = opt.batch_size;
    let (mut s, mut a, mut sn, mut r) = (vec![0; m], vec![0; m], vec![0; m], vec![0.0; m]);
    for step in 1..=opt.steps {
        for i in 0..m {
            let rec = &dataset[rng.gen_range(0..dataset.len())];
            (s[i], a[i], sn[i], r[i]) = (rec.s, rec.a, rec.s_next, rec.r);
        }
        let diverged = |e: Error, art: &RunArtifacts| match e {
            Error::Numerical { op } => Error::Diverged {
                step,
                detail: format!(
                    "non-finite value from `{op}`; last losses {:?}",
                    art.losses.last().map(|r| r.losses)
                ),
            },
            other => other,
        };
        let mut tape = Tape::new();
        let (root, breakdown) = (|| {
            let fwd = bundle.forward_batch(&mut tape, mdp, &s, &a, &sn)?;
            let batch = LatentBatch {
                z: fwd.z,
                z_next: fwd.z_next,
                z_pred: fwd.z_pred,
                delta: fwd.delta,
                reward_pred: fwd.reward,
                actions: a.clone(),
                rewards: r.clone(),
            };
            total_loss(&mut tape, bundle.space(), &batch, &cfg.losses, bundle.masks(), &mut rng)
        })()
        .map_err(|e| diverged(e, &art))?;
        let mut grads = tape.backward(root, &bundle.store).map_err(|e| diverged(e, &art))?;
        let grad_norm = clip_gradients(&mut grads, opt.clip_norm)?;
        if !grad_norm.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("non-finite gradient norm; losses {breakdown:?}"),
            });
        }
        rmsprop_step(&mut state, &mut bundle.store, &grads, opt.learning_rate)?;
        art.losses.push(LossRow {
            step,
            losses: breakdown,
            grad_norm,
        });
        if step % cfg.eval_interval == 0 || step == opt.steps {
            evaluate(bundle, mdp, &train_pairs, heldout, cfg, step, &mut art.metrics)?;
        }
    }
    Ok(art)
}
