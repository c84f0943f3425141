//! Properties of the latent group, the metrics and the contrastive term.

use geoworld::autodiff::{Tape, Tensor};
use geoworld::geometry::{wrap, FactorSpec, LatentPoint, LatentSpaceSpec, Metric, TAU};
use geoworld::losses::infonce_loss;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub const CASES: u32 = 1000;
pub const TOL: f64 = 1e-9;

type Points = (LatentSpaceSpec, Vec<Vec<f64>>);

fn space_strategy() -> impl Strategy<Value = LatentSpaceSpec> {
    let factor = prop_oneof![
        (0.5f64..10.0).prop_map(FactorSpec::Circle),
        Just(FactorSpec::Circle(TAU)),
        (1usize..3).prop_map(FactorSpec::Euclidean),
    ];
    prop::collection::vec(factor, 1..4).prop_map(|f| LatentSpaceSpec::new(f).unwrap())
}

fn coords(dim: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-20.0f64..20.0, dim), n)
}

/// A space with `n` raw points in it.
fn with_points(n: usize) -> impl Strategy<Value = Points> {
    space_strategy().prop_flat_map(move |s| {
        let d = s.total_dim();
        (Just(s), coords(d, n))
    })
}

fn metric(l1: bool) -> Metric {
    if l1 {
        Metric::L1
    } else {
        Metric::L2
    }
}

fn same(space: &LatentSpaceSpec, a: &LatentPoint, b: &LatentPoint) -> f64 {
    space.distance(a, b, Metric::L1).unwrap()
}

pub fn identity((space, p): Points) -> Result<(), TestCaseError> {
    let z = space.point(p[0].clone()).unwrap();
    let zero = vec![0.0; space.total_dim()];
    let r = space.oplus(&z, &zero).unwrap();
    prop_assert!(same(&space, &r, &z) <= TOL);
    Ok(())
}

pub fn compatibility((space, p): Points) -> Result<(), TestCaseError> {
    let z = space.point(p[0].clone()).unwrap();
    let (a, b) = (&p[1], &p[2]);
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x + y).collect();
    let lhs = space.oplus(&space.oplus(&z, a).unwrap(), b).unwrap();
    let rhs = space.oplus(&z, &ab).unwrap();
    prop_assert!(same(&space, &lhs, &rhs) <= TOL);
    Ok(())
}

pub fn inverse((space, p): Points) -> Result<(), TestCaseError> {
    let z = space.point(p[0].clone()).unwrap();
    let w = space.point(p[1].clone()).unwrap();
    let d = space.signed_diff(&w, &z).unwrap();
    let back = space.oplus(&z, &d).unwrap();
    prop_assert!(same(&space, &back, &w) <= TOL);
    let neg: Vec<f64> = d.iter().map(|x| -x).collect();
    let there = space.oplus(&w, &neg).unwrap();
    prop_assert!(same(&space, &there, &z) <= TOL);
    Ok(())
}

pub fn canonical_range((space, p): Points) -> Result<(), TestCaseError> {
    let z = space.point(p[0].clone()).unwrap();
    for (x, m) in z.coords().iter().zip(space.moduli()) {
        if let Some(k) = m {
            prop_assert!(*x >= 0.0 && *x < *k);
        }
    }
    for (x, m) in space.signed_diff(&z, &z).unwrap().iter().zip(space.moduli()) {
        prop_assert_eq!(*x, 0.0, "modulus {:?}", m);
    }
    Ok(())
}

pub fn metric_axioms(((space, p), l1): (Points, bool)) -> Result<(), TestCaseError> {
    let metric = metric(l1);
    let [a, b, c] = [0, 1, 2].map(|i| space.point(p[i].clone()).unwrap());
    let d = |x: &LatentPoint, y: &LatentPoint| space.distance(x, y, metric).unwrap();
    prop_assert!(d(&a, &b) >= 0.0);
    prop_assert!(d(&a, &a) <= 1e-12);
    prop_assert!((d(&a, &b) - d(&b, &a)).abs() <= TOL);
    prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + TOL);
    Ok(())
}

pub fn translation_invariance(((space, p), l1): (Points, bool)) -> Result<(), TestCaseError> {
    let metric = metric(l1);
    let [a, b] = [0, 1].map(|i| space.point(p[i].clone()).unwrap());
    let t = &p[2];
    let (at, bt) = (space.oplus(&a, t).unwrap(), space.oplus(&b, t).unwrap());
    let before = space.distance(&a, &b, metric).unwrap();
    let after = space.distance(&at, &bt, metric).unwrap();
    prop_assert!((before - after).abs() <= TOL);
    Ok(())
}

pub fn circle_bound((k, x, y): (f64, f64, f64)) -> Result<(), TestCaseError> {
    let s = LatentSpaceSpec::new(vec![FactorSpec::Circle(k)]).unwrap();
    let d = s.distance(&s.point(vec![x]).unwrap(), &s.point(vec![y]).unwrap(), Metric::L1).unwrap();
    prop_assert!(d <= k / 2.0 + 1e-12);
    Ok(())
}

pub fn wrap_idempotent((x, k): (f64, f64)) -> Result<(), TestCaseError> {
    let once = wrap(x, k).unwrap();
    prop_assert!((0.0..k).contains(&once));
    prop_assert_eq!(wrap(once, k).unwrap(), once);
    Ok(())
}

pub fn wrap_quotient((x, k, m): (f64, f64, i32)) -> Result<(), TestCaseError> {
    let a = wrap(x, k).unwrap();
    let b = wrap(x + m as f64 * k, k).unwrap();
    // equal as points on the circle
    let gap = (a - b).abs();
    prop_assert!(gap.min(k - gap) <= TOL);
    Ok(())
}

type Shifted = ((LatentSpaceSpec, Vec<Vec<f64>>, Vec<Vec<i32>>), Vec<usize>, bool);

pub fn infonce_quotient_invariance(((space, p, shifts), actions, l1): Shifted) -> Result<(), TestCaseError> {
    let metric = metric(l1);
    let d = space.total_dim();
    let loss = |rows: &[Vec<f64>]| {
        let mut tape = Tape::new();
        let flat = |r: &[Vec<f64>]| Tensor::new(6, d, r.iter().flatten().copied().collect()).unwrap();
        let zp = tape.constant(flat(&rows[..6])).unwrap();
        let zn = tape.constant(flat(&rows[6..])).unwrap();
        let l = infonce_loss(&mut tape, &space, zp, zn, &actions, metric, 1.0, true).unwrap();
        tape.value(l).item()
    };
    let shifted: Vec<Vec<f64>> = p
        .iter()
        .zip(&shifts)
        .map(|(row, sh)| {
            row.iter()
                .zip(sh)
                .zip(space.moduli())
                .map(|((x, m), k)| match k {
                    Some(k) => x + *m as f64 * k,
                    None => *x,
                })
                .collect()
        })
        .collect();
    prop_assert!((loss(&p) - loss(&shifted)).abs() <= TOL);
    Ok(())
}

fn run<S: Strategy>(cases: u32, strategy: S, f: fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, f).map_err(|e| e.to_string())
}

/// Runs one named property for `cases` random inputs.
pub fn check(name: &str, cases: u32) -> Result<(), String> {
    match name {
        "identity" => run(cases, with_points(1), identity),
        "compatibility" => run(cases, with_points(3), compatibility),
        "inverse" => run(cases, with_points(2), inverse),
        "canonical_range" => run(cases, with_points(1), canonical_range),
        "metric_axioms" => run(cases, (with_points(3), any::<bool>()), metric_axioms),
        "translation_invariance" => run(cases, (with_points(3), any::<bool>()), translation_invariance),
        "circle_bound" => run(cases, (0.5f64..10.0, -50.0f64..50.0, -50.0f64..50.0), circle_bound),
        "wrap_idempotent" => run(cases, (-1e6f64..1e6, 1e-3f64..1e3), wrap_idempotent),
        "wrap_quotient" => run(cases, (-100.0f64..100.0, 0.5f64..10.0, -5i32..5), wrap_quotient),
        "infonce_quotient_invariance" => run(
            cases,
            (
                space_strategy().prop_flat_map(|s| {
                    let d = s.total_dim();
                    (Just(s), coords(d, 12), prop::collection::vec(prop::collection::vec(-3i32..4, d), 12))
                }),
                prop::collection::vec(0usize..2, 6),
                any::<bool>(),
            ),
            infonce_quotient_invariance,
        ),
        other => Err(format!("unknown property {other}")),
    }
}

pub const NAMES: &[&str] = &[
    "identity",
    "compatibility",
    "inverse",
    "canonical_range",
    "metric_axioms",
    "translation_invariance",
    "circle_bound",
    "wrap_idempotent",
    "wrap_quotient",
    "infonce_quotient_invariance",
];
