//! Encoder, transition delta and reward head as tanh MLPs.
//!
//! Circular latent coordinates are fed to the transition and reward nets as
//! `(cos, sin)` of the angle `2π z / k`, so both nets are functions on the
//! quotient. The encoder output is wrapped onto the canonical range with an
//! identity gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::envs::TabularMdp;
use crate::error::{Error, Result};
use crate::geometry::{LatentPoint, LatentSpaceSpec, TAU};

/// Dense tanh network. Hidden layers use tanh, the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
    input_dim: usize,
    output_dim: usize,
}

impl Mlp {
    /// Register the layers `input -> hidden... -> output` in `store` under `prefix`.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid(format!("{prefix}: layer widths must be positive")));
        }
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output_dim))
            .collect();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
            let wid = store.insert(format!("{prefix}.{i}.w"), Tensor::new(fan_in, fan_out, weights)?)?;
            let bid = store.insert(format!("{prefix}.{i}.b"), Tensor::zeros(1, fan_out))?;
            layers.push((wid, bid));
        }
        Ok(Mlp {
            layers,
            input_dim,
            output_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(store, w)?;
            let bv = tape.param(store, b)?;
            let lin = tape.matmul(h, wv)?;
            h = tape.add_bias(lin, bv)?;
            if i < last {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_hidden: Vec<usize>,
    pub transition_hidden: Vec<usize>,
    pub reward_hidden: Vec<usize>,
    /// Feed circular coordinates as `(cos, sin)` pairs; `false` feeds raw angles.
    pub periodic_features: bool,
    /// Zero masked delta components before applying the group action.
    pub hard_mask: bool,
    /// One transition and reward net per action instead of one-hot conditioning.
    pub per_action_nets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_hidden: vec![32, 32],
            transition_hidden: vec![32],
            reward_hidden: vec![32],
            periodic_features: true,
            hard_mask: false,
            per_action_nets: false,
        }
    }
}

/// Per action, the latent coordinates the action must leave unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskTable(Vec<Vec<usize>>);

impl MaskTable {
    pub fn new(masks: Vec<Vec<usize>>, latent_dim: usize) -> Result<Self> {
        for (a, m) in masks.iter().enumerate() {
            if let Some(&bad) = m.iter().find(|&&i| i >= latent_dim) {
                return Err(Error::contract(format!(
                    "mask for action {a}: coordinate {bad} out of range for dimension {latent_dim}"
                )));
            }
        }
        if let Some((first, rest)) = masks.split_first() {
            if !rest.is_empty() && first.iter().any(|c| rest.iter().all(|m| m.contains(c))) {
                return Err(Error::contract("every action masks a common coordinate"));
            }
        }
        Ok(MaskTable(masks))
    }

    pub fn empty(n_actions: usize) -> Self {
        MaskTable(vec![Vec::new(); n_actions])
    }

    pub fn for_action(&self, a: usize) -> &[usize] {
        self.0.get(a).map_or(&[], Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(Vec::is_empty)
    }

    pub fn as_lists(&self) -> &[Vec<usize>] {
        &self.0
    }

    /// `batch x d` matrix with 1 at each record's masked coordinates.
    pub fn indicator(&self, actions: &[usize], latent_dim: usize) -> Tensor {
        let mut t = Tensor::zeros(actions.len(), latent_dim);
        for (r, &a) in actions.iter().enumerate() {
            for &c in self.for_action(a) {
                t.data_mut()[r * latent_dim + c] = 1.0;
            }
        }
        t
    }
}

/// Encoder, transition delta, reward head and masks with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    space: LatentSpaceSpec,
    masks: MaskTable,
    config: ModelConfig,
    n_actions: usize,
    input_dim: usize,
    pub store: ParamStore,
    encoder: Mlp,
    transition: Vec<Mlp>,
    reward: Vec<Mlp>,
}

/// Latents and predictions for one batch, as tape nodes.
pub struct BatchForward {
    pub z: Var,
    pub z_next: Var,
    pub delta: Var,
    pub z_pred: Var,
    pub reward: Var,
}

impl ModelBundle {
    /// Glorot-uniform weights and zero biases, drawn in a fixed order from `seed`.
    pub fn init(
        space: LatentSpaceSpec,
        masks: MaskTable,
        config: ModelConfig,
        input_dim: usize,
        n_actions: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_actions == 0 {
            return Err(Error::invalid("model needs at least one action"));
        }
        let d = space.total_dim();
        let masks = MaskTable::new(masks.0, d)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Mlp::new(&mut store, "enc", input_dim, &config.encoder_hidden, d, &mut rng)?;
        let feat = feature_dim(&space, config.periodic_features);
        let (transition, reward) = if config.per_action_nets {
            let mut t = Vec::new();
            for a in 0..n_actions {
                t.push(Mlp::new(&mut store, &format!("trans.a{a}"), feat, &config.transition_hidden, d, &mut rng)?);
            }
            let mut r = Vec::new();
            for a in 0..n_actions {
                r.push(Mlp::new(&mut store, &format!("rew.a{a}"), feat, &config.reward_hidden, 1, &mut rng)?);
            }
            (t, r)
        } else {
            let t = Mlp::new(&mut store, "trans", feat + n_actions, &config.transition_hidden, d, &mut rng)?;
            let r = Mlp::new(&mut store, "rew", feat + n_actions, &config.reward_hidden, 1, &mut rng)?;
            (vec![t], vec![r])
        };
        Ok(ModelBundle {
            space,
            masks,
            config,
            n_actions,
            input_dim,
            store,
            encoder,
            transition,
            reward,
        })
    }

    pub fn for_mdp(
        mdp: &TabularMdp,
        space: LatentSpaceSpec,
        masks: MaskTable,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        Self::init(space, masks, config, mdp.encoding_dim(), mdp.n_actions(), seed)
    }

    pub fn space(&self) -> &LatentSpaceSpec {
        &self.space
    }

    pub fn masks(&self) -> &MaskTable {
        &self.masks
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.space.total_dim()
    }

    /// Encode a `batch x input_dim` matrix of state encodings.
    pub fn encode_var(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        if tape.value(states).cols() != self.input_dim {
            return Err(Error::contract(format!(
                "encode: input has {} columns, model expects {}",
                tape.value(states).cols(),
                self.input_dim
            )));
        }
        let raw = self.encoder.forward(tape, &self.store, states)?;
        tape.wrap_passthrough(raw, self.space.moduli())
    }

    /// Input features for the transition and reward nets.
    pub fn features_var(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        featurize(tape, z, &self.space, self.config.periodic_features)
    }

    fn conditioned(&self, tape: &mut Tape, nets: &[Mlp], z: Var, actions: &[usize]) -> Result<Var> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.n_actions) {
            return Err(Error::contract(format!("action {bad} out of range")));
        }
        let feat = self.features_var(tape, z)?;
        if !self.config.per_action_nets {
            let onehot = tape.constant(one_hot_rows(actions, self.n_actions))?;
            let input = tape.concat(&[feat, onehot])?;
            return nets[0].forward(tape, &self.store, input);
        }
        // every net on every row, then select each row's action
        let mut total: Option<Var> = None;
        for (a, net) in nets.iter().enumerate() {
            let out = net.forward(tape, &self.store, feat)?;
            let sel: Vec<f64> = actions
                .iter()
                .flat_map(|&b| std::iter::repeat(if a == b { 1.0 } else { 0.0 }).take(net.output_dim()))
                .collect();
            let sel = tape.constant(Tensor::new(actions.len(), net.output_dim(), sel)?)?;
            let picked = tape.mul(out, sel)?;
            total = Some(match total {
                Some(t) => tape.add(t, picked)?,
                None => picked,
            });
        }
        Ok(total.expect("n_actions > 0"))
    }

    /// Transition delta for each row of `z`.
    pub fn delta_var(&self, tape: &mut Tape, z: Var, actions: &[usize]) -> Result<Var> {
        let delta = self.conditioned(tape, &self.transition, z, actions)?;
        if self.config.hard_mask && !self.masks.is_empty() {
            let keep = self.masks.indicator(actions, self.latent_dim()).map(|m| 1.0 - m);
            let keep = tape.constant(keep)?;
            return tape.mul(delta, keep);
        }
        Ok(delta)
    }

    /// `z ⊕ delta`, wrapped with identity gradient.
    pub fn apply_var(&self, tape: &mut Tape, z: Var, delta: Var) -> Result<Var> {
        let sum = tape.add(z, delta)?;
        tape.wrap_passthrough(sum, self.space.moduli())
    }

    pub fn reward_var(&self, tape: &mut Tape, z: Var, actions: &[usize]) -> Result<Var> {
        self.conditioned(tape, &self.reward, z, actions)
    }

    /// Full forward pass for a batch of transitions.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        mdp: &TabularMdp,
        states: &[usize],
        actions: &[usize],
        next_states: &[usize],
    ) -> Result<BatchForward> {
        let s = tape.constant(encodings(mdp, states)?)?;
        let sn = tape.constant(encodings(mdp, next_states)?)?;
        let z = self.encode_var(tape, s)?;
        let z_next = self.encode_var(tape, sn)?;
        let delta = self.delta_var(tape, z, actions)?;
        let z_pred = self.apply_var(tape, z, delta)?;
        let reward = self.reward_var(tape, z, actions)?;
        Ok(BatchForward {
            z,
            z_next,
            delta,
            z_pred,
            reward,
        })
    }

    /// Encode states given as rows of encodings.
    pub fn encode_rows(&self, rows: &Tensor) -> Result<Vec<LatentPoint>> {
        let mut tape = Tape::new();
        let x = tape.constant(rows.clone())?;
        let z = self.encode_var(&mut tape, x)?;
        Ok(self.points(tape.value(z)))
    }

    pub fn encode(&self, encoding: &[f64]) -> Result<LatentPoint> {
        Ok(self.encode_rows(&Tensor::row(encoding.to_vec()))?.remove(0))
    }

    /// Latents of every state of `mdp`, indexed by state.
    pub fn encode_all(&self, mdp: &TabularMdp) -> Result<Vec<LatentPoint>> {
        let all: Vec<usize> = (0..mdp.n_states()).collect();
        self.encode_rows(&encodings(mdp, &all)?)
    }

    fn latent_matrix(&self, zs: &[&LatentPoint]) -> Result<Tensor> {
        let d = self.latent_dim();
        if let Some(z) = zs.iter().find(|z| z.coords().len() != d) {
            return Err(Error::contract(format!(
                "latent has {} coordinates, model expects {d}",
                z.coords().len()
            )));
        }
        Tensor::new(zs.len(), d, zs.iter().flat_map(|z| z.coords().iter().copied()).collect())
    }

    fn points(&self, t: &Tensor) -> Vec<LatentPoint> {
        (0..t.rows())
            .map(|r| self.space.canonicalize(t.row_slice(r).to_vec()))
            .collect()
    }

    pub fn delta_many(&self, zs: &[&LatentPoint], actions: &[usize]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let z = tape.constant(self.latent_matrix(zs)?)?;
        let d = self.delta_var(&mut tape, z, actions)?;
        let t = tape.value(d);
        Ok((0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect())
    }

    pub fn delta(&self, z: &LatentPoint, a: usize) -> Result<Vec<f64>> {
        Ok(self.delta_many(&[z], &[a])?.remove(0))
    }

    pub fn predict_next_many(&self, zs: &[&LatentPoint], actions: &[usize]) -> Result<Vec<LatentPoint>> {
        let mut tape = Tape::new();
        let z = tape.constant(self.latent_matrix(zs)?)?;
        let d = self.delta_var(&mut tape, z, actions)?;
        let p = self.apply_var(&mut tape, z, d)?;
        Ok(self.points(tape.value(p)))
    }

    pub fn predict_next(&self, z: &LatentPoint, a: usize) -> Result<LatentPoint> {
        Ok(self.predict_next_many(&[z], &[a])?.remove(0))
    }

    pub fn predict_reward_many(&self, zs: &[&LatentPoint], actions: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = tape.constant(self.latent_matrix(zs)?)?;
        let r = self.reward_var(&mut tape, z, actions)?;
        Ok(tape.value(r).data().to_vec())
    }

    pub fn predict_reward(&self, z: &LatentPoint, a: usize) -> Result<f64> {
        Ok(self.predict_reward_many(&[z], &[a])?[0])
    }

    /// Feature rows for arbitrary latents, for downstream nets.
    pub fn feature_rows(&self, zs: &[&LatentPoint]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let z = tape.constant(self.latent_matrix(zs)?)?;
        let f = self.features_var(&mut tape, z)?;
        Ok(tape.value(f).clone())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.store.save(path)
    }

    /// Overwrite parameters with a checkpoint of the same architecture.
    pub fn load_params(&mut self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let loaded = ParamStore::load(path)?;
        self.store.copy_from(&loaded)
    }
}

/// Width of [`featurize`]'s output.
pub fn feature_dim(space: &LatentSpaceSpec, periodic: bool) -> usize {
    space
        .moduli()
        .iter()
        .map(|m| if periodic && m.is_some() { 2 } else { 1 })
        .sum()
}

/// Circular columns become `(cos 2πz/k, sin 2πz/k)`; Euclidean columns pass through.
pub fn featurize(tape: &mut Tape, z: Var, space: &LatentSpaceSpec, periodic: bool) -> Result<Var> {
    if !periodic || !space.has_circles() {
        return Ok(z);
    }
    let mut parts = Vec::with_capacity(2 * space.total_dim());
    let moduli = space.moduli();
    let mut c = 0;
    while c < moduli.len() {
        match moduli[c] {
            Some(k) => {
                let col = tape.slice_cols(z, c, c + 1)?;
                let angle = tape.scale(col, TAU / k)?;
                parts.push(tape.cos(angle)?);
                parts.push(tape.sin(angle)?);
                c += 1;
            }
            None => {
                let mut end = c + 1;
                while end < moduli.len() && moduli[end].is_none() {
                    end += 1;
                }
                parts.push(tape.slice_cols(z, c, end)?);
                c = end;
            }
        }
    }
    tape.concat(&parts)
}

pub fn one_hot_rows(indices: &[usize], width: usize) -> Tensor {
    let mut t = Tensor::zeros(indices.len(), width);
    for (r, &i) in indices.iter().enumerate() {
        t.data_mut()[r * width + i] = 1.0;
    }
    t
}

/// Stack the encodings of `states`.
pub fn encodings(mdp: &TabularMdp, states: &[usize]) -> Result<Tensor> {
    if let Some(&bad) = states.iter().find(|&&s| s >= mdp.n_states()) {
        return Err(Error::contract(format!("state {bad} out of range")));
    }
    let w = mdp.encoding_dim();
    Tensor::new(
        states.len(),
        w,
        states.iter().flat_map(|&s| mdp.encode(s).iter().copied()).collect(),
    )
}
