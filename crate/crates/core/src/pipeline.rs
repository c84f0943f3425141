//! Seeded experiment cells and their on-disk artifacts.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::autodiff::Tensor;
use crate::config::{RunConfig, Variant};
use crate::envs::{collect_random_filtered, split_transitions, write_dataset_csv, DatasetSplit, TabularMdp, TransitionRecord};
use crate::error::{Error, Result};
use crate::eval::latent_dump;
use crate::model::ModelBundle;
use crate::rl::{
    augment_synthetic, ddqn_train, evaluate_policy, evaluate_q_table, latent_tuples, raw_tuples, running_average,
    state_features, value_iteration, write_returns_csv, QTuple, ReturnRow, ReturnStats,
};
use crate::training::{train, MetricRow, RunArtifacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    WorldModel,
    Rl,
    Both,
}

impl Mode {
    pub fn world_model(self) -> bool {
        matches!(self, Mode::WorldModel | Mode::Both)
    }

    pub fn rl(self) -> bool {
        matches!(self, Mode::Rl | Mode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellKind {
    WorldModel { variant: String },
    Rl,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub kind: CellKind,
    pub seed: u64,
    pub dir: PathBuf,
}

/// Every cell of an experiment, resolved before anything runs.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub config: RunConfig,
    pub out: PathBuf,
    pub mode: Mode,
    pub cells: Vec<Cell>,
}

impl ExperimentPlan {
    /// Seeds are `config.seed + seed_offset + i` for `i < n_seeds`.
    pub fn new(config: RunConfig, out: PathBuf, mode: Mode, n_seeds: usize, seed_offset: u64) -> Result<Self> {
        if n_seeds == 0 {
            return Err(Error::invalid("at least one seed is required"));
        }
        let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| config.seed + seed_offset + i).collect();
        let mut cells = Vec::new();
        if mode.world_model() {
            for v in &config.variants {
                for &seed in &seeds {
                    cells.push(Cell {
                        kind: CellKind::WorldModel { variant: v.name.clone() },
                        seed,
                        dir: out.join(&v.name).join(format!("seed_{seed}")),
                    });
                }
            }
        }
        if mode.rl() {
            for &seed in &seeds {
                cells.push(Cell {
                    kind: CellKind::Rl,
                    seed,
                    dir: out.join("rl").join(format!("seed_{seed}")),
                });
            }
        }
        let dirs: BTreeSet<&PathBuf> = cells.iter().map(|c| &c.dir).collect();
        if dirs.len() != cells.len() {
            return Err(Error::invalid("cell output paths collide; variant names must differ from `rl`"));
        }
        Ok(ExperimentPlan {
            config,
            out,
            mode,
            cells,
        })
    }
}

/// A trained world model together with the data it saw.
pub struct WorldModelRun {
    pub mdp: TabularMdp,
    pub split: DatasetSplit,
    pub dataset: Vec<TransitionRecord>,
    pub bundle: ModelBundle,
    pub artifacts: RunArtifacts,
}

pub fn run_world_model(cfg: &RunConfig, variant: &Variant, seed: u64) -> Result<WorldModelRun> {
    let mdp = cfg.build_env()?;
    let split = split_transitions(&mdp, cfg.holdout_frac, seed)?;
    let dataset = collect_random_filtered(
        &mdp,
        cfg.dataset.episodes,
        cfg.dataset.horizon,
        seed,
        Some(&split.train_pairs),
    )?;
    let (bundle, artifacts) = train(&cfg.train_config(variant, seed)?, &dataset, &mdp, Some(&split))?;
    Ok(WorldModelRun {
        mdp,
        split,
        dataset,
        bundle,
        artifacts,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_world_model_cell(dir: &Path, cfg: &RunConfig, variant: &Variant, seed: u64, run: &WorldModelRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    run.artifacts.write_losses_csv(dir.join("losses.csv"))?;
    run.artifacts.write_metrics_csv(dir.join("metrics.csv"))?;
    latent_dump(&run.bundle, &run.mdp)?.write_csv(dir.join("latents.csv"))?;
    write_dataset_csv(dir.join("dataset.csv"), &run.dataset)?;
    run.bundle.save(dir.join("checkpoint.json"))?;
    let meta = json!({
        "config": cfg,
        "variant": variant,
        "seed": seed,
        "env": run.mdp.name(),
        "dataset_size": run.dataset.len(),
        "train_pairs": run.split.train_pairs,
        "heldout_pairs": run.split.heldout_pairs,
        "final_train": run.artifacts.final_metrics("train"),
        "final_test": run.artifacts.final_metrics("test"),
    });
    write_json(&dir.join("run_meta.json"), &meta)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentResult {
    pub agent: String,
    pub curve: Vec<ReturnRow>,
    pub final_stats: ReturnStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RlRun {
    pub seed: u64,
    pub env: String,
    pub dataset_size: usize,
    pub optimal: ReturnStats,
    pub agents: Vec<AgentResult>,
}

impl RlRun {
    pub fn agent(&self, name: &str) -> Option<&AgentResult> {
        self.agents.iter().find(|a| a.agent == name)
    }
}

pub const RAW_AGENT: &str = "ddqn";

pub fn awm_agent_name(variant: &str) -> String {
    format!("ddqn_awm_{variant}")
}

/// The offline dataset: one logged transition for each of a seeded `coverage` fraction of valid pairs.
pub fn offline_dataset(mdp: &TabularMdp, coverage: f64, seed: u64) -> Result<Vec<TransitionRecord>> {
    let split = split_transitions(mdp, 1.0 - coverage, seed)?;
    Ok(split.train_pairs.iter().map(|&(s, a)| mdp.record(s, a)).collect())
}

/// Raw-state DDQN plus one latent DDQN per variant, on the goal task. When `dir`
/// is given, world-model checkpoints are written there and read back before use.
pub fn run_rl(cfg: &RunConfig, seed: u64, dir: Option<&Path>) -> Result<RlRun> {
    let rl = &cfg.rl;
    let mdp = cfg.build_goal_env()?;
    let dataset = offline_dataset(&mdp, rl.coverage, seed)?;
    let optimal = evaluate_q_table(&mdp, &value_iteration(&mdp, rl.gamma, 1e-12, 100_000), rl.max_steps)?;

    let run_agent = |name: String, tuples: Vec<QTuple>, feats: Tensor, n_actions: usize| -> Result<AgentResult> {
        let mut points = Vec::new();
        let q = ddqn_train(&tuples, n_actions, rl, seed, |step, q| {
            points.push((step, evaluate_policy(&mdp, &feats, q, rl.max_steps)?.mean));
            Ok(())
        })?;
        Ok(AgentResult {
            agent: name,
            curve: running_average(&points, rl.running_window),
            final_stats: evaluate_policy(&mdp, &feats, &q, rl.max_steps)?,
        })
    };

    let mut agents = Vec::new();
    agents.push(run_agent(
        RAW_AGENT.to_string(),
        raw_tuples(&dataset, &mdp),
        state_features(&mdp, None)?,
        mdp.n_actions(),
    )?);
    for v in &cfg.variants {
        let (mut bundle, _) = train(&cfg.train_config(v, seed)?, &dataset, &mdp, None)?;
        if let Some(dir) = dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(format!("checkpoint_{}.json", v.name));
            bundle.save(&path)?;
            bundle.load_params(&path)?;
        }
        let aug = augment_synthetic(&dataset, &bundle, &mdp)?;
        let tuples = latent_tuples(&aug, &bundle, rl.synthetic_weight)?;
        agents.push(run_agent(
            awm_agent_name(&v.name),
            tuples,
            state_features(&mdp, Some(&bundle))?,
            mdp.n_actions(),
        )?);
    }
    Ok(RlRun {
        seed,
        env: mdp.name().to_string(),
        dataset_size: dataset.len(),
        optimal,
        agents,
    })
}

pub fn write_rl_cell(dir: &Path, cfg: &RunConfig, run: &RlRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<(String, u64, ReturnRow)> = run
        .agents
        .iter()
        .flat_map(|a| a.curve.iter().map(|r| (a.agent.clone(), run.seed, *r)))
        .collect();
    write_returns_csv(dir.join("rl_returns.csv"), &rows)?;
    let finals: Vec<_> = run
        .agents
        .iter()
        .map(|a| json!({"agent": a.agent, "mean_return": a.final_stats.mean, "std_error": a.final_stats.std_error}))
        .collect();
    let meta = json!({
        "config": cfg,
        "seed": run.seed,
        "env": run.env,
        "dataset_size": run.dataset_size,
        "optimal_mean_return": run.optimal.mean,
        "agents": finals,
    });
    write_json(&dir.join("run_meta.json"), &meta)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellResult {
    WorldModel {
        variant: String,
        seed: u64,
        train: Option<MetricRow>,
        test: Option<MetricRow>,
    },
    Rl(Box<RlRun>),
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: Cell,
    pub result: std::result::Result<CellResult, String>,
}

fn run_cell(plan: &ExperimentPlan, cell: &Cell) -> Result<CellResult> {
    let cfg = &plan.config;
    match &cell.kind {
        CellKind::WorldModel { variant } => {
            let v = cfg
                .variant(variant)
                .ok_or_else(|| Error::contract(format!("unknown variant {variant}")))?;
            let run = run_world_model(cfg, v, cell.seed)?;
            write_world_model_cell(&cell.dir, cfg, v, cell.seed, &run)?;
            Ok(CellResult::WorldModel {
                variant: variant.clone(),
                seed: cell.seed,
                train: run.artifacts.final_metrics("train").cloned(),
                test: run.artifacts.final_metrics("test").cloned(),
            })
        }
        CellKind::Rl => {
            let run = run_rl(cfg, cell.seed, Some(&cell.dir))?;
            write_rl_cell(&cell.dir, cfg, &run)?;
            Ok(CellResult::Rl(Box::new(run)))
        }
    }
}

fn isolated(plan: &ExperimentPlan, cell: &Cell) -> CellOutcome {
    let result = match catch_unwind(AssertUnwindSafe(|| run_cell(plan, cell))) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "cell panicked".into())),
    };
    if let Err(msg) = &result {
        let _ = fs::create_dir_all(&cell.dir);
        let _ = fs::write(cell.dir.join("error.txt"), format!("{msg}\n"));
    }
    CellOutcome {
        cell: cell.clone(),
        result,
    }
}

/// Run every cell on up to `jobs` threads. World-model cells finish before RL cells start.
/// Failures are reported per cell and never stop sibling cells.
pub fn execute(plan: &ExperimentPlan, jobs: usize) -> Result<Vec<CellOutcome>> {
    fs::create_dir_all(&plan.out).map_err(|e| Error::io(&plan.out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let (wm, rl): (Vec<&Cell>, Vec<&Cell>) = plan
        .cells
        .iter()
        .partition(|c| matches!(c.kind, CellKind::WorldModel { .. }));
    let mut outcomes: Vec<CellOutcome> = pool.install(|| wm.par_iter().map(|c| isolated(plan, c)).collect());
    outcomes.extend(pool.install(|| rl.par_iter().map(|c| isolated(plan, c)).collect::<Vec<_>>()));
    write_summary(&plan.out.join("summary.csv"), plan, &outcomes)?;
    if plan.mode.rl() {
        write_rl_summary(&plan.out.join("rl_summary.csv"), &outcomes)?;
    }
    Ok(outcomes)
}

/// Mean and sample standard deviation; the deviation is 0 for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn pm(values: &[f64]) -> [String; 3] {
    if values.is_empty() {
        return ["".into(), "".into(), "".into()];
    }
    let (m, s) = mean_std(values);
    [m.to_string(), s.to_string(), format!("{m:.2} ± {s:.2}")]
}

/// One row per variant and split with final H@1, H@5 and MRR (×100) as mean ± std over seeds.
pub fn write_summary(path: &Path, plan: &ExperimentPlan, outcomes: &[CellOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record([
        "variant", "split", "seeds", "failed", "H@1_mean", "H@1_std", "H@1", "H@5_mean", "H@5_std", "H@5", "MRR_mean",
        "MRR_std", "MRR", "failed_seeds",
    ])?;
    if plan.mode.world_model() {
        for v in &plan.config.variants {
            let mine: Vec<&CellOutcome> = outcomes
                .iter()
                .filter(|o| matches!(&o.cell.kind, CellKind::WorldModel { variant } if *variant == v.name))
                .collect();
            let failed: Vec<String> = mine
                .iter()
                .filter(|o| o.result.is_err())
                .map(|o| o.cell.seed.to_string())
                .collect();
            for split in ["train", "test"] {
                let rows: Vec<&MetricRow> = mine
                    .iter()
                    .filter_map(|o| match &o.result {
                        Ok(CellResult::WorldModel { train, test, .. }) => {
                            if split == "train" {
                                train.as_ref()
                            } else {
                                test.as_ref()
                            }
                        }
                        _ => None,
                    })
                    .collect();
                if rows.is_empty() && failed.len() < mine.len() {
                    continue;
                }
                let col = |f: fn(&MetricRow) -> f64| pm(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
                let [h1m, h1s, h1] = col(|r| r.hits_at_1);
                let [h5m, h5s, h5] = col(|r| r.hits_at_5);
                let [mm, ms, mr] = col(|r| r.mrr);
                w.write_record([
                    v.name.clone(),
                    split.to_string(),
                    rows.len().to_string(),
                    failed.len().to_string(),
                    h1m,
                    h1s,
                    h1,
                    h5m,
                    h5s,
                    h5,
                    mm,
                    ms,
                    mr,
                    failed.join(" "),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Final greedy return per agent as mean ± std over seeds, with the optimal return for reference.
pub fn write_rl_summary(path: &Path, outcomes: &[CellOutcome]) -> Result<()> {
    let runs: Vec<&RlRun> = outcomes
        .iter()
        .filter_map(|o| match &o.result {
            Ok(CellResult::Rl(r)) => Some(r.as_ref()),
            _ => None,
        })
        .collect();
    let failed = outcomes
        .iter()
        .filter(|o| o.cell.kind == CellKind::Rl && o.result.is_err())
        .count();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_record(["agent", "seeds", "failed", "return_mean", "return_std", "return"])?;
    let mut names: Vec<String> = Vec::new();
    for r in &runs {
        for a in &r.agents {
            if !names.contains(&a.agent) {
                names.push(a.agent.clone());
            }
        }
    }
    let mut put = |name: &str, vals: Vec<f64>| -> Result<()> {
        let [m, s, f] = pm(&vals);
        w.write_record([name.to_string(), vals.len().to_string(), failed.to_string(), m, s, f])?;
        Ok(())
    };
    for name in &names {
        put(name, runs.iter().filter_map(|r| r.agent(name)).map(|a| a.final_stats.mean).collect())?;
    }
    if !runs.is_empty() {
        put("optimal", runs.iter().map(|r| r.optimal.mean).collect())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(env: &str) -> RunConfig {
        RunConfig::parse(
            &format!(
                "env = \"{env}\"\nn = 3\neval_interval = 5\n[optimizer]\nsteps = 10\n[dataset]\nepisodes = 5\nhorizon = 5\n[rl]\nsteps = 40\neval_every = 20\n"
            ),
            false,
            "tiny",
        )
        .unwrap()
    }

    #[test]
    fn plan_paths_are_unique() {
        let plan = ExperimentPlan::new(tiny("torus"), "out".into(), Mode::Both, 3, 0).unwrap();
        assert_eq!(plan.cells.len(), 2 * 3 + 3);
        assert!(plan.cells.iter().any(|c| c.dir == Path::new("out/priors/seed_2")));
        let offset = ExperimentPlan::new(tiny("torus"), "out".into(), Mode::Rl, 1, 10).unwrap();
        assert_eq!(offset.cells[0].seed, 10);
    }

    #[test]
    fn offline_dataset_covers_fraction() {
        let cfg = tiny("grid");
        let mdp = cfg.build_goal_env().unwrap();
        let data = offline_dataset(&mdp, 0.8, 1).unwrap();
        assert_eq!(data.len(), (0.8 * mdp.valid_pairs().len() as f64).round() as usize);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rl_run_reports_every_agent() {
        let run = run_rl(&tiny("torus"), 0, None).unwrap();
        let names: Vec<&str> = run.agents.iter().map(|a| a.agent.as_str()).collect();
        assert_eq!(names, ["ddqn", "ddqn_awm_priors", "ddqn_awm_baseline"]);
        assert!(run.agents.iter().all(|a| a.curve.len() == 2));
        assert!(run.optimal.mean < 0.0);
    }
}
