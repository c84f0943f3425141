//! Experiment configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{make_grid_orient, make_passage, make_torus, TabularMdp, WallMode, GRID_FORWARD, GRID_TURN_RIGHT};
use crate::error::{Error, Result};
use crate::geometry::{FactorSpec, LatentSpaceSpec, TAU};
use crate::losses::LossWeights;
use crate::model::{MaskTable, ModelConfig};
use crate::rl::RlConfig;
use crate::training::{OptimizerConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Passage,
    Torus,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKeyword {
    /// The environment's default masks when the latent space has circle factors, none otherwise.
    #[default]
    Auto,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Keyword(MaskKeyword),
    Explicit(Vec<Vec<usize>>),
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec::Keyword(MaskKeyword::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default)]
    pub latent: Option<LatentSpaceSpec>,
    #[serde(default)]
    pub masks: MaskSpec,
}

/// Optimizer settings as written; unset fields take environment defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerOverrides {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    steps: Option<usize>,
    clip_norm: Option<f64>,
    rho: Option<f64>,
    momentum: Option<f64>,
    eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Random-policy episodes collected per run.
    pub episodes: usize,
    pub horizon: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            episodes: 100,
            horizon: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    env: EnvKind,
    n: usize,
    #[serde(default)]
    wall_mode: WallMode,
    #[serde(default)]
    latent: Option<LatentSpaceSpec>,
    #[serde(default)]
    masks: Option<MaskSpec>,
    #[serde(default)]
    variants: Vec<VariantSpec>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    losses: LossWeights,
    #[serde(default)]
    optimizer: OptimizerOverrides,
    #[serde(default)]
    dataset: DatasetConfig,
    #[serde(default)]
    rl: RlConfig,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_holdout")]
    holdout_frac: f64,
    #[serde(default = "default_eval_interval")]
    eval_interval: usize,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

fn default_holdout() -> f64 {
    0.1
}

fn default_eval_interval() -> usize {
    1000
}

/// A model variant with its latent space and masks fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Variant {
    pub name: String,
    pub latent: LatentSpaceSpec,
    pub masks: Vec<Vec<usize>>,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub env: EnvKind,
    pub n: usize,
    pub wall_mode: WallMode,
    pub variants: Vec<Variant>,
    pub model: ModelConfig,
    pub losses: LossWeights,
    pub optimizer: OptimizerConfig,
    pub dataset: DatasetConfig,
    pub rl: RlConfig,
    pub seed: u64,
    pub holdout_frac: f64,
    pub eval_interval: usize,
    pub output_dir: Option<PathBuf>,
}

/// The structured latent space matching an environment's symmetry.
pub fn prior_latent(env: EnvKind) -> LatentSpaceSpec {
    match env {
        EnvKind::Passage => LatentSpaceSpec::circles(1),
        EnvKind::Torus => LatentSpaceSpec::circles(2),
        EnvKind::Grid => LatentSpaceSpec::new(vec![FactorSpec::Circle(TAU), FactorSpec::Euclidean(2)])
            .expect("valid grid latent"),
    }
}

/// Per-action coordinates each action leaves unchanged under the prior latent.
pub fn default_masks(env: EnvKind) -> Vec<Vec<usize>> {
    match env {
        EnvKind::Passage => vec![Vec::new(), Vec::new()],
        EnvKind::Torus => vec![vec![1], vec![0]],
        EnvKind::Grid => {
            let mut m = vec![Vec::new(); 2];
            m[GRID_FORWARD] = vec![0];
            m[GRID_TURN_RIGHT] = vec![1, 2];
            m
        }
    }
}

fn resolve_masks(env: EnvKind, latent: &LatentSpaceSpec, spec: &MaskSpec) -> Vec<Vec<usize>> {
    match spec {
        MaskSpec::Explicit(m) => m.clone(),
        MaskSpec::Keyword(MaskKeyword::None) => vec![Vec::new(); 2],
        MaskSpec::Keyword(MaskKeyword::Auto) => {
            if latent.has_circles() && latent.total_dim() == prior_latent(env).total_dim() {
                default_masks(env)
            } else {
                vec![Vec::new(); 2]
            }
        }
    }
}

fn resolve_optimizer(env: EnvKind, o: &OptimizerOverrides) -> OptimizerConfig {
    let d = OptimizerConfig {
        batch_size: if env == EnvKind::Grid { 64 } else { 32 },
        ..OptimizerConfig::default()
    };
    OptimizerConfig {
        learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        steps: o.steps.unwrap_or(d.steps),
        clip_norm: o.clip_norm.unwrap_or(d.clip_norm),
        rho: o.rho.unwrap_or(d.rho),
        momentum: o.momentum.unwrap_or(d.momentum),
        eps: o.eps.unwrap_or(d.eps),
    }
}

impl RunConfig {
    /// Parse a config from text. `json` selects JSON over TOML; `origin` names the source in errors.
    pub fn parse(text: &str, json: bool, origin: &str) -> Result<Self> {
        let cfg_err = |message: String| Error::Config {
            path: origin.to_string(),
            message,
        };
        let raw: RawConfig = if json {
            serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| cfg_err(e.message().to_string()))?
        };
        Self::resolve(raw).map_err(|e| match e {
            Error::Config { .. } => e,
            other => cfg_err(other.to_string()),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json, &path.display().to_string())
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let env = raw.env;
        if !raw.variants.is_empty() && (raw.latent.is_some() || raw.masks.is_some()) {
            return Err(Error::invalid("give either top-level `latent`/`masks` or `variants`, not both"));
        }
        let specs = if !raw.variants.is_empty() {
            raw.variants
        } else if raw.latent.is_some() || raw.masks.is_some() {
            vec![VariantSpec {
                name: "main".into(),
                latent: raw.latent,
                masks: raw.masks.unwrap_or_default(),
            }]
        } else {
            let prior = prior_latent(env);
            vec![
                VariantSpec {
                    name: "priors".into(),
                    latent: Some(prior.clone()),
                    masks: MaskSpec::default(),
                },
                VariantSpec {
                    name: "baseline".into(),
                    latent: Some(LatentSpaceSpec::euclidean(prior.total_dim())),
                    masks: MaskSpec::Keyword(MaskKeyword::None),
                },
            ]
        };
        let mut variants: Vec<Variant> = Vec::with_capacity(specs.len());
        for v in specs {
            if v.name.is_empty() || !v.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::invalid(format!("variant name {:?} must be [A-Za-z0-9_-]+", v.name)));
            }
            if variants.iter().any(|w| w.name == v.name) {
                return Err(Error::invalid(format!("duplicate variant name {:?}", v.name)));
            }
            let latent = v.latent.unwrap_or_else(|| prior_latent(env));
            let masks = resolve_masks(env, &latent, &v.masks);
            MaskTable::new(masks.clone(), latent.total_dim())?;
            variants.push(Variant {
                name: v.name,
                latent,
                masks,
            });
        }
        let cfg = RunConfig {
            env,
            n: raw.n,
            wall_mode: raw.wall_mode,
            variants,
            model: raw.model,
            losses: raw.losses,
            optimizer: resolve_optimizer(env, &raw.optimizer),
            dataset: raw.dataset,
            rl: raw.rl,
            seed: raw.seed,
            holdout_frac: raw.holdout_frac,
            eval_interval: raw.eval_interval,
            output_dir: raw.output_dir,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        self.optimizer.validate()?;
        self.rl.validate()?;
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(Error::invalid(format!("holdout_frac must lie in [0, 1), got {}", self.holdout_frac)));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be >= 1"));
        }
        if self.dataset.episodes == 0 || self.dataset.horizon == 0 {
            return Err(Error::invalid("dataset episodes and horizon must be >= 1"));
        }
        self.build_env()?;
        Ok(())
    }

    /// The environment without a goal, used for world-model experiments.
    pub fn build_env(&self) -> Result<TabularMdp> {
        match self.env {
            EnvKind::Passage => make_passage(self.n),
            EnvKind::Torus => make_torus(self.n),
            EnvKind::Grid => make_grid_orient(self.n, None, self.wall_mode),
        }
    }

    /// The goal-reaching variant of the environment, goal at the far corner.
    pub fn build_goal_env(&self) -> Result<TabularMdp> {
        let c = self.n - 1;
        match self.env {
            EnvKind::Passage => make_passage(self.n)?.with_goal(&[c]),
            EnvKind::Torus => make_torus(self.n)?.with_goal(&[c * self.n + c]),
            EnvKind::Grid => make_grid_orient(self.n, Some((c, c)), self.wall_mode),
        }
    }

    pub fn variant(&self, name: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn train_config(&self, variant: &Variant, seed: u64) -> Result<TrainConfig> {
        Ok(TrainConfig {
            space: variant.latent.clone(),
            masks: MaskTable::new(variant.masks.clone(), variant.latent.total_dim())?,
            model: self.model.clone(),
            losses: self.losses.clone(),
            optimizer: self.optimizer.clone(),
            seed,
            eval_interval: self.eval_interval,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_two_variants() {
        let c = RunConfig::parse("env = \"torus\"\nn = 5\n", false, "t.toml").unwrap();
        assert_eq!(c.variants.len(), 2);
        assert_eq!(c.variants[0].masks, vec![vec![1], vec![0]]);
        assert!(c.variants[1].masks.iter().all(Vec::is_empty));
        assert!(!c.variants[1].latent.has_circles());
        assert_eq!(c.optimizer.batch_size, 32);
        assert_eq!(c.optimizer.steps, 50_000);
    }

    #[test]
    fn grid_defaults() {
        let c = RunConfig::parse("env = \"grid\"\nn = 5\n[optimizer]\nsteps = 10\n", false, "g").unwrap();
        assert_eq!(c.optimizer.batch_size, 64);
        assert_eq!(c.optimizer.steps, 10);
        assert_eq!(c.variants[0].latent.total_dim(), 3);
        assert_eq!(c.variants[0].masks, vec![vec![0], vec![1, 2]]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("env = \"torus\"\nn = 5\n[optimizer]\nlearning_rte = 0.1\n", false, "x.toml")
            .unwrap_err();
        match err {
            Error::Config { path, message } => {
                assert_eq!(path, "x.toml");
                assert!(message.contains("learning_rte"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let err = RunConfig::parse(r#"{"env": "torus", "n": 5, "sed": 1}"#, true, "x.json").unwrap_err();
        assert!(err.to_string().contains("sed"));
    }

    #[test]
    fn explicit_latent_and_masks() {
        let text = r#"
env = "torus"
n = 5
latent = [{circle = 6.2831853}, {euclid = 2}]
masks = "none"
"#;
        let c = RunConfig::parse(text, false, "t").unwrap();
        assert_eq!(c.variants.len(), 1);
        assert_eq!(c.variants[0].latent.total_dim(), 3);
        assert!(c.variants[0].masks.iter().all(Vec::is_empty));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("env = \"torus\"\nn = 5\nholdout_frac = 1.5\n", false, "t").is_err());
        assert!(RunConfig::parse("env = \"torus\"\nn = 1\n", false, "t").is_err());
        let bad_mask = "env = \"torus\"\nn = 5\n[[variants]]\nname = \"a\"\nmasks = [[0], [0]]\n";
        assert!(RunConfig::parse(bad_mask, false, "t").is_err());
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let c = RunConfig::parse("env = \"passage\"\nn = 7\n", false, "p").unwrap();
        let json = c.to_json().unwrap();
        assert!(json.contains("\"passage\""));
        assert!(json.contains("\"batch_size\": 32"));
    }

    #[test]
    fn goal_envs() {
        let c = RunConfig::parse("env = \"grid\"\nn = 5\n", false, "g").unwrap();
        let g = c.build_goal_env().unwrap();
        assert_eq!(g.initial_states().len(), 96);
        let c = RunConfig::parse("env = \"torus\"\nn = 3\n", false, "t").unwrap();
        assert_eq!(c.build_goal_env().unwrap().initial_states().len(), 8);
    }
}
