use geoworld::autodiff::{grad_check, ParamStore, Tape, Tensor, Var};
use geoworld::geometry::{FactorSpec, LatentSpaceSpec, Metric, TAU};
use geoworld::losses::{
    disentangle_loss, entropy_loss, infonce_loss, reward_loss, symmetrized_infonce, total_loss, volume_loss,
    LatentBatch, LossWeights,
};
use geoworld::model::MaskTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const MARGIN: f64 = 1e-2;
pub const ROWS: usize = 8;
pub const ACTIONS: [usize; ROWS] = [0, 1, 0, 2, 1, 0, 1, 0];
pub const HINGE: f64 = 0.7;

pub fn spaces() -> Vec<LatentSpaceSpec> {
    vec![
        LatentSpaceSpec::euclidean(3),
        LatentSpaceSpec::circles(2),
        LatentSpaceSpec::new(vec![FactorSpec::Circle(TAU), FactorSpec::Euclidean(2)]).unwrap(),
        LatentSpaceSpec::new(vec![FactorSpec::Circle(3.0), FactorSpec::Circle(TAU), FactorSpec::Euclidean(1)]).unwrap(),
    ]
}

/// Every coordinate difference between the two rows is away from zero and,
/// on circles, away from the antipode.
pub fn generic_pair(space: &LatentSpaceSpec, a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).zip(space.moduli()).all(|((x, y), m)| {
        let d = x - y;
        match m {
            Some(k) => {
                let r = d.rem_euclid(*k);
                r > MARGIN && (r - k / 2.0).abs() > MARGIN && k - r > MARGIN
            }
            None => d.abs() > MARGIN,
        }
    })
}

pub fn l2(space: &LatentSpaceSpec, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(space.moduli())
        .map(|((x, y), m)| {
            let d = x - y;
            let d = match m {
                Some(k) => (d + k / 2.0).rem_euclid(*k) - k / 2.0,
                None => d,
            };
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Under L1 the contrastive gradient of an anchor coordinate is exactly zero
/// when every candidate of its group lies on the same side; finite differences
/// then measure only roundoff. Require both signs around every prediction.
pub fn mixed_signs(space: &LatentSpaceSpec, anchors: &[Vec<f64>], cands: &[Vec<f64>]) -> bool {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for a in 0..3 {
        let g: Vec<usize> = (0..ROWS).filter(|&i| ACTIONS[i] == a).collect();
        groups.push(if g.len() >= 2 { g } else { (0..ROWS).collect() });
    }
    groups.push((0..ROWS).collect());
    groups.iter().all(|g| {
        g.iter().all(|&i| {
            (0..space.total_dim()).all(|c| {
                let k = space.moduli()[c];
                let side = |j: usize| {
                    let d = anchors[i][c] - cands[j][c];
                    match k {
                        Some(k) => (d + k / 2.0).rem_euclid(k) - k / 2.0,
                        None => d,
                    }
                };
                g.iter().any(|&j| side(j) > 0.0) && g.iter().any(|&j| side(j) < 0.0)
            })
        })
    })
}

pub struct Sample {
    store: ParamStore,
}

impl Sample {
    pub fn rows(&self, name: &str) -> Vec<Vec<f64>> {
        let t = self.store.get(self.store.id(name).unwrap());
        (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
    }

    pub fn var(&self, tape: &mut Tape, s: &ParamStore, name: &str) -> Var {
        tape.param(s, s.id(name).unwrap()).unwrap()
    }
}

/// Latent tensors `z`, `zn`, `zp` and `delta`, resampled until every pair the
/// objective compares is generic.
pub fn sample(space: &LatentSpaceSpec, seed: u64, l1: bool) -> Sample {
    let d = space.total_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut store = ParamStore::new();
        for name in ["z", "zn", "zp", "delta"] {
            let v = (0..ROWS * d)
                .map(|_| {
                    let x: f64 = rng.gen_range(-1.5..1.5);
                    if name == "delta" && x.abs() < 0.1 {
                        0.1f64.copysign(x)
                    } else {
                        x
                    }
                })
                .collect();
            store.insert(name, Tensor::new(ROWS, d, v).unwrap()).unwrap();
        }
        let s = Sample { store };
        let (z, zn, zp) = (s.rows("z"), s.rows("zn"), s.rows("zp"));
        let all_pairs = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter().all(|x| b.iter().all(|y| generic_pair(space, x, y)))
        };
        let z_ok = (0..ROWS).all(|i| (0..ROWS).all(|j| i == j || generic_pair(space, &z[i], &z[j])));
        if all_pairs(&zp, &zn)
            && z_ok
            && (!l1 || mixed_signs(space, &zp, &zn))
            && z.iter().zip(&zn).all(|(a, b)| generic_pair(space, a, b) && (l2(space, a, b) - HINGE).abs() > MARGIN)
        {
            return s;
        }
    }
}

/// Worst relative error of `f` over every test space and seed.
pub fn worst_error(metric: Metric, f: impl Fn(&mut Tape, &ParamStore, &Sample, &LatentSpaceSpec) -> Var) -> f64 {
    let mut worst: f64 = 0.0;
    for space in spaces() {
        for seed in SEEDS {
            let s = sample(&space, seed, metric == Metric::L1);
            let err = grad_check(&s.store, EPS, |tape, store| Ok(f(tape, store, &s, &space))).unwrap();
            worst = worst.max(err);
        }
    }
    worst
}

pub fn infonce_action_groups() -> f64 {
    let mut worst: f64 = 0.0;
    for metric in [Metric::L1, Metric::L2] {
        for t in [0.5, 1.0] {
            worst = worst.max(worst_error(metric, |tape, store, s, space| {
                let zp = s.var(tape, store, "zp");
                let zn = s.var(tape, store, "zn");
                infonce_loss(tape, space, zp, zn, &ACTIONS, metric, t, true).unwrap()
            }));
        }
    }
    worst
}

pub fn infonce_batch_negatives() -> f64 {
    let mut worst: f64 = 0.0;
    for metric in [Metric::L1, Metric::L2] {
        worst = worst.max(worst_error(metric, |tape, store, s, space| {
            let zp = s.var(tape, store, "zp");
            let zn = s.var(tape, store, "zn");
            infonce_loss(tape, space, zp, zn, &ACTIONS, metric, 1.0, false).unwrap()
        }));
    }
    worst
}

pub fn symmetrized_infonce_term() -> f64 {
    let mut worst: f64 = 0.0;
    for metric in [Metric::L1, Metric::L2] {
        worst = worst.max(worst_error(metric, |tape, store, s, space| {
            let zp = s.var(tape, store, "zp");
            let zn = s.var(tape, store, "zn");
            symmetrized_infonce(tape, space, zp, zn, &ACTIONS, metric, 1.0, true).unwrap()
        }));
    }
    worst
}

pub fn reward_term() -> f64 {
    worst_error(Metric::L2, |tape, store, s, _| {
        let zp = s.var(tape, store, "zp");
        let r = tape.slice_cols(zp, 0, 1).unwrap();
        let targets: Vec<f64> = (0..ROWS).map(|i| i as f64 * 0.25 - 1.0).collect();
        reward_loss(tape, r, &targets).unwrap()
    })
}

pub fn volume_term() -> f64 {
    worst_error(Metric::L2, |tape, store, s, space| {
        let z = s.var(tape, store, "z");
        let zn = s.var(tape, store, "zn");
        volume_loss(tape, space, z, zn, HINGE).unwrap()
    })
}

pub fn disentangle_term() -> f64 {
    worst_error(Metric::L2, |tape, store, s, space| {
        let d = space.total_dim();
        let masks = MaskTable::new(vec![vec![0], vec![d - 1], (0..d).collect()], d).unwrap();
        let delta = s.var(tape, store, "delta");
        disentangle_loss(tape, delta, &ACTIONS, &masks).unwrap()
    })
}

pub fn entropy_term() -> f64 {
    let mut worst: f64 = 0.0;
    let pairs: Vec<(usize, usize)> = (0..ROWS).map(|i| (i, (i + 3) % ROWS)).collect();
    for metric in [Metric::L1, Metric::L2] {
        worst = worst.max(worst_error(metric, |tape, store, s, space| {
            let z = s.var(tape, store, "z");
            entropy_loss(tape, space, z, &pairs, 0.7, metric).unwrap()
        }));
    }
    worst
}

pub fn full_objective() -> f64 {
    let weights = LossWeights {
        hinge: HINGE,
        entropy: 0.5,
        ..LossWeights::default()
    };
    worst_error(Metric::L2, |tape, store, s, space| {
        let d = space.total_dim();
        let masks = MaskTable::new(vec![vec![0], vec![d - 1], vec![]], d).unwrap();
        let z = s.var(tape, store, "z");
        let z_next = s.var(tape, store, "zn");
        let z_pred = s.var(tape, store, "zp");
        let delta = s.var(tape, store, "delta");
        let reward_pred = tape.slice_cols(delta, 0, 1).unwrap();
        let batch = LatentBatch {
            z,
            z_next,
            z_pred,
            delta,
            reward_pred,
            actions: ACTIONS.to_vec(),
            rewards: vec![0.0, -1.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0],
        };
        // fixed partner draw for the entropy term
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        total_loss(tape, space, &batch, &weights, &masks, &mut rng).unwrap().0
    })
}

pub fn composite_ops() -> f64 {
    worst_error(Metric::L2, |tape, store, s, _| {
        let z = s.var(tape, store, "z");
        let zn = s.var(tape, store, "zn");
        let a = tape.tanh(z).unwrap();
        let b = tape.mul(a, zn).unwrap();
        let c = tape.sin(b).unwrap();
        let e = tape.cos(zn).unwrap();
        let cat = tape.concat(&[c, e]).unwrap();
        let t = tape.transpose(cat).unwrap();
        let m = tape.matmul(cat, t).unwrap();
        let lse = tape.logsumexp(m).unwrap();
        let sq = tape.square(lse).unwrap();
        let sh = tape.shift(sq, 1.0).unwrap();
        let r = tape.sqrt(sh).unwrap();
        let l = tape.log(r).unwrap();
        let x = tape.exp(l).unwrap();
        tape.mean(x).unwrap()
    })
}

/// Every objective term with its name.
pub const CASES: &[(&str, fn() -> f64)] = &[
    ("infonce_action_groups", infonce_action_groups),
    ("infonce_batch_negatives", infonce_batch_negatives),
    ("symmetrized_infonce_term", symmetrized_infonce_term),
    ("reward_term", reward_term),
    ("volume_term", volume_term),
    ("disentangle_term", disentangle_term),
    ("entropy_term", entropy_term),
    ("full_objective", full_objective),
    ("composite_ops", composite_ops),
];
