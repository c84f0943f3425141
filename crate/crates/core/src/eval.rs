//! Ranking evaluation of predicted transitions and latent dumps.
//!
//! A prediction `z ⊕ Δ(z, a)` is ranked against the latents of every MDP state.
//! Ties count against the prediction, so rank is `1 + #{c != true : d_c <= d_true}`.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use crate::envs::{DatasetSplit, TabularMdp, ORIENTATIONS};
use crate::error::{Error, Result};
use crate::geometry::{embed_torus, LatentPoint, LatentSpaceSpec, Metric, TORUS_ALPHA, TORUS_BETA};
use crate::model::ModelBundle;

pub fn rank_transition(
    pred: &LatentPoint,
    true_next: usize,
    candidates: &[LatentPoint],
    space: &LatentSpaceSpec,
    metric: Metric,
) -> Result<usize> {
    let Some(target) = candidates.get(true_next) else {
        return Err(Error::contract(format!(
            "true state {true_next} missing from {} candidates",
            candidates.len()
        )));
    };
    let d_true = space.distance(pred, target, metric)?;
    let mut rank = 1;
    for (i, c) in candidates.iter().enumerate() {
        if i != true_next && space.distance(pred, c, metric)? <= d_true {
            rank += 1;
        }
    }
    Ok(rank)
}

pub fn hits_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::contract("hits_at_k of no ranks"));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::contract("mrr of no ranks"));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Ok,
    NoHoldout,
}

/// Aggregated ranks for one split. Metrics are scaled by 100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub split: String,
    pub seed: u64,
    pub status: ReportStatus,
    pub ranks: Vec<usize>,
    pub hits_at_1: Option<f64>,
    pub hits_at_5: Option<f64>,
    pub mrr: Option<f64>,
}

impl RankingReport {
    fn from_ranks(split: &str, seed: u64, ranks: Vec<usize>) -> Result<Self> {
        if ranks.is_empty() {
            return Ok(RankingReport {
                split: split.to_string(),
                seed,
                status: ReportStatus::NoHoldout,
                ranks,
                hits_at_1: None,
                hits_at_5: None,
                mrr: None,
            });
        }
        Ok(RankingReport {
            split: split.to_string(),
            seed,
            status: ReportStatus::Ok,
            hits_at_1: Some(100.0 * hits_at_k(&ranks, 1)?),
            hits_at_5: Some(100.0 * hits_at_k(&ranks, 5)?),
            mrr: Some(100.0 * mrr(&ranks)?),
            ranks,
        })
    }
}

/// Rank the model's prediction for every pair in `pairs`.
pub fn ranking_eval(
    bundle: &ModelBundle,
    mdp: &TabularMdp,
    pairs: &BTreeSet<(usize, usize)>,
    metric: Metric,
    split: &str,
    seed: u64,
) -> Result<RankingReport> {
    if pairs.is_empty() {
        return RankingReport::from_ranks(split, seed, Vec::new());
    }
    let latents = bundle.encode_all(mdp)?;
    let zs: Vec<&LatentPoint> = pairs.iter().map(|&(s, _)| &latents[s]).collect();
    let actions: Vec<usize> = pairs.iter().map(|&(_, a)| a).collect();
    let preds = bundle.predict_next_many(&zs, &actions)?;
    let ranks = pairs
        .iter()
        .zip(&preds)
        .map(|(&(s, a), p)| rank_transition(p, mdp.next_state(s, a), &latents, bundle.space(), metric))
        .collect::<Result<Vec<_>>>()?;
    RankingReport::from_ranks(split, seed, ranks)
}

/// Ranking report over the held-out pairs of `split`.
pub fn generalization_eval(
    bundle: &ModelBundle,
    mdp: &TabularMdp,
    split: &DatasetSplit,
    metric: Metric,
) -> Result<RankingReport> {
    ranking_eval(bundle, mdp, &split.heldout_pairs, metric, "test", split.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub state: usize,
    pub labels: Vec<String>,
    pub coords: Vec<f64>,
    pub embedding: Option<[f64; 3]>,
}

/// One row per state: labels, latent coordinates and, on the 2π torus, its R³ embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub label_names: Vec<String>,
    pub latent_dim: usize,
    pub rows: Vec<LatentRow>,
}

pub fn latent_dump(bundle: &ModelBundle, mdp: &TabularMdp) -> Result<LatentDump> {
    let space = bundle.space();
    let latents = bundle.encode_all(mdp)?;
    let torus = space.is_standard_torus();
    let rows = latents
        .into_iter()
        .enumerate()
        .map(|(s, z)| {
            let labels = mdp
                .label_names()
                .iter()
                .zip(mdp.label(s))
                .map(|(name, &v)| {
                    if *name == "orientation" {
                        ORIENTATIONS[v as usize].to_string()
                    } else {
                        v.to_string()
                    }
                })
                .collect();
            let embedding = if torus {
                Some(embed_torus(space, &z, TORUS_ALPHA, TORUS_BETA)?)
            } else {
                None
            };
            Ok(LatentRow {
                state: s,
                labels,
                coords: z.into_inner(),
                embedding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentDump {
        label_names: mdp.label_names().iter().map(|s| s.to_string()).collect(),
        latent_dim: space.total_dim(),
        rows,
    })
}

impl LatentDump {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["state".to_string()];
        h.extend(self.label_names.iter().cloned());
        h.extend((0..self.latent_dim).map(|i| format!("z{i}")));
        if self.rows.first().is_some_and(|r| r.embedding.is_some()) {
            h.extend(["ex", "ey", "ez"].map(String::from));
        }
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        w.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![r.state.to_string()];
            rec.extend(r.labels.iter().cloned());
            rec.extend(r.coords.iter().map(|c| c.to_string()));
            if let Some(e) = r.embedding {
                rec.extend(e.iter().map(|c| c.to_string()));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
