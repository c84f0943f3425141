//! Sort-based oracles for the ranking metrics.

use geoworld::eval::{hits_at_k, mrr, rank_transition};
use geoworld::geometry::{FactorSpec, LatentPoint, LatentSpaceSpec, Metric, TAU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 1000;

/// Position of the true candidate after a stable sort by distance in which the
/// true candidate goes after everything at its distance.
fn oracle_rank(dists: &[f64], true_idx: usize) -> usize {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&i, &j| {
        dists[i]
            .partial_cmp(&dists[j])
            .unwrap()
            .then((i == true_idx).cmp(&(j == true_idx)))
    });
    order.iter().position(|&i| i == true_idx).unwrap() + 1
}

fn oracle_hits(ranks: &[usize], k: usize) -> f64 {
    let mut hits = 0usize;
    for &r in ranks {
        if r <= k {
            hits += 1;
        }
    }
    hits as f64 / ranks.len() as f64
}

fn oracle_mrr(ranks: &[usize]) -> f64 {
    let mut s = 0.0;
    for &r in ranks {
        s += 1.0 / r as f64;
    }
    s / ranks.len() as f64
}

fn random_space(rng: &mut ChaCha8Rng) -> LatentSpaceSpec {
    match rng.gen_range(0..3) {
        0 => LatentSpaceSpec::euclidean(rng.gen_range(1..4)),
        1 => LatentSpaceSpec::circles(rng.gen_range(1..3)),
        _ => LatentSpaceSpec::new(vec![FactorSpec::Circle(TAU), FactorSpec::Euclidean(2)]).unwrap(),
    }
}

/// Coordinates on a coarse lattice so that exact distance ties are common.
fn lattice_point(space: &LatentSpaceSpec, rng: &mut ChaCha8Rng) -> LatentPoint {
    let coords = space
        .moduli()
        .iter()
        .map(|m| match m {
            Some(k) => k * rng.gen_range(0..8) as f64 / 8.0,
            None => rng.gen_range(-3..4) as f64 * 0.5,
        })
        .collect();
    space.point(coords).unwrap()
}

/// Ranks on random lattice instances; returns how many instances had ties.
pub fn rank_instances(instances: u64) -> Result<usize, String> {
    let mut ties = 0;
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = random_space(&mut rng);
        let metric = if rng.gen_bool(0.5) { Metric::L1 } else { Metric::L2 };
        let n = rng.gen_range(1..30);
        let cands: Vec<LatentPoint> = (0..n).map(|_| lattice_point(&space, &mut rng)).collect();
        let pred = if rng.gen_bool(0.5) {
            lattice_point(&space, &mut rng)
        } else {
            let c: Vec<f64> = (0..space.total_dim()).map(|_| rng.gen_range(-4.0..4.0)).collect();
            space.point(c).unwrap()
        };
        let t = rng.gen_range(0..n);
        let dists: Vec<f64> = cands.iter().map(|c| space.distance(&pred, c, metric).unwrap()).collect();
        if dists.iter().enumerate().any(|(i, d)| i != t && *d == dists[t]) {
            ties += 1;
        }
        let got = rank_transition(&pred, t, &cands, &space, metric).unwrap();
        let want = oracle_rank(&dists, t);
        if got != want {
            return Err(format!("instance {seed}: rank {got}, oracle {want}"));
        }
    }
    Ok(ties)
}

/// Hits@k and MRR on random rank lists.
pub fn metric_instances(instances: u64) -> Result<(), String> {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let n = rng.gen_range(1..50);
        let ranks: Vec<usize> = (0..n).map(|_| rng.gen_range(1..40)).collect();
        for k in [1, 5, 10] {
            if hits_at_k(&ranks, k).unwrap() != oracle_hits(&ranks, k) {
                return Err(format!("instance {seed}: hits@{k} differs"));
            }
        }
        if mrr(&ranks).unwrap() != oracle_mrr(&ranks) {
            return Err(format!("instance {seed}: mrr differs"));
        }
    }
    Ok(())
}

