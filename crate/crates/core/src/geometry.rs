//! Latent spaces built as products of circles `R/kZ` and Euclidean blocks.
//!
//! Every coordinate belongs to exactly one factor. Circular coordinates are
//! kept in the canonical range `[0, k)`; Euclidean coordinates are plain reals.
//! The group operation `oplus` is coordinatewise addition followed by wrapping
//! on circular coordinates, and distances use the shortest signed
//! representative of each circular difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAU: f64 = std::f64::consts::TAU;

/// One factor of a product latent space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FactorSpec {
    /// The quotient `R/kZ`, one coordinate.
    #[serde(rename = "circle")]
    Circle(f64),
    /// `R^dim`.
    #[serde(rename = "euclid")]
    Euclidean(usize),
}

impl FactorSpec {
    pub fn dim(&self) -> usize {
        match self {
            FactorSpec::Circle(_) => 1,
            FactorSpec::Euclidean(d) => *d,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FactorSpec::Circle(k) if !(k.is_finite() && k > 0.0) => {
                Err(Error::invalid(format!("circle modulus must be positive, got {k}")))
            }
            FactorSpec::Euclidean(0) => Err(Error::invalid("euclidean factor needs dim >= 1")),
            _ => Ok(()),
        }
    }
}

/// Distance used on the latent space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    #[default]
    L2,
}

/// Ordered product of factors. Coordinate `i` always belongs to the same factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FactorSpec>", into = "Vec<FactorSpec>")]
pub struct LatentSpaceSpec {
    factors: Vec<FactorSpec>,
    moduli: Vec<Option<f64>>,
}

impl TryFrom<Vec<FactorSpec>> for LatentSpaceSpec {
    type Error = Error;

    fn try_from(factors: Vec<FactorSpec>) -> Result<Self> {
        LatentSpaceSpec::new(factors)
    }
}

impl From<LatentSpaceSpec> for Vec<FactorSpec> {
    fn from(space: LatentSpaceSpec) -> Self {
        space.factors
    }
}

/// A point of a latent space, stored in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPoint(Vec<f64>);

impl LatentPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for LatentPoint {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Reduce `x` modulo `k` into `[0, k)`.
pub fn wrap(x: f64, k: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::invalid(format!("wrap: non-finite input {x}")));
    }
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid(format!("wrap: modulus must be positive, got {k}")));
    }
    Ok(wrap_unchecked(x, k))
}

#[inline]
pub(crate) fn wrap_unchecked(x: f64, k: f64) -> f64 {
    let r = x - k * (x / k).floor();
    // floor can leave r == k (or a hair below 0) through rounding
    if r >= k || r < 0.0 {
        0.0
    } else {
        r
    }
}

/// Signed representative of `diff` in `[-k/2, k/2)`.
#[inline]
pub(crate) fn wrap_signed(diff: f64, k: f64) -> f64 {
    wrap_unchecked(diff + 0.5 * k, k) - 0.5 * k
}

impl LatentSpaceSpec {
    pub fn new(factors: Vec<FactorSpec>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("latent space needs at least one factor"));
        }
        for f in &factors {
            f.validate()?;
        }
        let moduli = factors
            .iter()
            .flat_map(|f| match *f {
                FactorSpec::Circle(k) => vec![Some(k)],
                FactorSpec::Euclidean(d) => vec![None; d],
            })
            .collect();
        Ok(LatentSpaceSpec { factors, moduli })
    }

    /// `n` circles of circumference 2π.
    pub fn circles(n: usize) -> Self {
        Self::new(vec![FactorSpec::Circle(TAU); n]).expect("n > 0")
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::new(vec![FactorSpec::Euclidean(dim)]).expect("dim > 0")
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn total_dim(&self) -> usize {
        self.moduli.len()
    }

    /// Per-coordinate modulus; `None` for Euclidean coordinates.
    pub fn moduli(&self) -> &[Option<f64>] {
        &self.moduli
    }

    pub fn is_circular(&self, coord: usize) -> bool {
        self.moduli.get(coord).is_some_and(|m| m.is_some())
    }

    pub fn has_circles(&self) -> bool {
        self.moduli.iter().any(Option::is_some)
    }

    /// True for exactly `Circle(2π) x Circle(2π)`.
    pub fn is_standard_torus(&self) -> bool {
        self.factors.len() == 2
            && self
                .factors
                .iter()
                .all(|f| matches!(f, FactorSpec::Circle(k) if (k - TAU).abs() < 1e-9))
    }

    fn check_dim(&self, what: &str, len: usize) -> Result<()> {
        if len != self.total_dim() {
            return Err(Error::contract(format!(
                "{what}: expected {} coordinates, got {len}",
                self.total_dim()
            )));
        }
        Ok(())
    }

    /// Build a canonical point from raw coordinates.
    pub fn point(&self, coords: Vec<f64>) -> Result<LatentPoint> {
        self.check_dim("point", coords.len())?;
        if let Some(x) = coords.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("point: non-finite coordinate {x}")));
        }
        Ok(self.canonicalize(coords))
    }

    pub(crate) fn canonicalize(&self, mut coords: Vec<f64>) -> LatentPoint {
        for (c, m) in coords.iter_mut().zip(&self.moduli) {
            if let Some(k) = m {
                *c = wrap_unchecked(*c, *k);
            }
        }
        LatentPoint(coords)
    }

    /// Group action: `z ⊕ delta`.
    pub fn oplus(&self, z: &LatentPoint, delta: &[f64]) -> Result<LatentPoint> {
        self.check_dim("oplus", z.0.len())?;
        self.check_dim("oplus", delta.len())?;
        if delta.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("oplus: non-finite delta"));
        }
        let sum = z.0.iter().zip(delta).map(|(a, b)| a + b).collect();
        Ok(self.canonicalize(sum))
    }

    /// `a - b`, with circular coordinates reduced to `[-k/2, k/2)`.
    pub fn signed_diff(&self, a: &LatentPoint, b: &LatentPoint) -> Result<Vec<f64>> {
        self.check_dim("signed_diff", a.0.len())?;
        self.check_dim("signed_diff", b.0.len())?;
        Ok(self.signed_diff_raw(&a.0, &b.0))
    }

    pub(crate) fn signed_diff_raw(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(b)
            .zip(&self.moduli)
            .map(|((x, y), m)| match m {
                Some(k) => wrap_signed(x - y, *k),
                None => x - y,
            })
            .collect()
    }

    pub fn distance(&self, a: &LatentPoint, b: &LatentPoint, metric: Metric) -> Result<f64> {
        self.check_dim("distance", a.0.len())?;
        self.check_dim("distance", b.0.len())?;
        Ok(self.distance_raw(&a.0, &b.0, metric))
    }

    pub(crate) fn distance_raw(&self, a: &[f64], b: &[f64], metric: Metric) -> f64 {
        let diff = self.signed_diff_raw(a, b);
        match metric {
            Metric::L1 => diff.iter().map(|d| d.abs()).sum(),
            Metric::L2 => diff.iter().map(|d| d * d).sum::<f64>().sqrt(),
        }
    }
}

/// Map a point of `Circle(2π)²` into R³ for plotting.
pub fn embed_torus(space: &LatentSpaceSpec, z: &LatentPoint, alpha: f64, beta: f64) -> Result<[f64; 3]> {
    if !space.is_standard_torus() {
        return Err(Error::contract("embed_torus needs the space Circle(2π) x Circle(2π)"));
    }
    if !(alpha > beta && beta > 0.0) {
        return Err(Error::invalid(format!(
            "embed_torus needs alpha > beta > 0, got alpha={alpha}, beta={beta}"
        )));
    }
    space.check_dim("embed_torus", z.0.len())?;
    let (x, y) = (z.0[0], z.0[1]);
    Ok([
        (alpha + beta * x.cos()) * y.cos(),
        (alpha + beta * y.cos()) * x.cos(),
        beta * y.sin(),
    ])
}

pub const TORUS_ALPHA: f64 = 2.0;
pub const TORUS_BETA: f64 = 1.0;
