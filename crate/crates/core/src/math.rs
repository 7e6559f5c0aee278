//! Dense vector arithmetic shared by the problems, optimizers and the cluster
//! simulator.
//!
//! Every reduction walks its inputs left to right in index order, so a run
//! is bit-reproducible for a given configuration and seed no matter how the
//! per-worker work was scheduled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `d`-dimensional real vector. Model parameters, gradients and
/// accumulators all use this representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        other.check_dim(self.dim())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &ParamVector) -> Result<ParamVector> {
        other.check_dim(self.dim())?;
        let out = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a + scale * b)
            .collect();
        finite(ParamVector(out))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, factor: f64) -> Result<ParamVector> {
        finite(ParamVector(self.0.iter().map(|v| v * factor).collect()))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, idx: usize) -> &f64 {
        &self.0[idx]
    }
}

impl std::ops::IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, idx: usize) -> &mut f64 {
        &mut self.0[idx]
    }
}

fn finite(v: ParamVector) -> Result<ParamVector> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain("non-finite entry produced".into()))
    }
}

/// Coordinate-wise product `a ∘ b`.
pub fn hadamard(a: &ParamVector, b: &ParamVector) -> Result<ParamVector> {
    b.check_dim(a.dim())?;
    finite(ParamVector(
        a.0.iter().zip(&b.0).map(|(x, y)| x * y).collect(),
    ))
}

/// `1 / sqrt(b2[j] + shift)` for every coordinate.
pub fn inv_sqrt_shifted(b2: &ParamVector, shift: f64) -> Result<ParamVector> {
    if !(shift >= 0.0) {
        return Err(Error::Domain(format!("shift must be >= 0, got {shift}")));
    }
    let mut out = Vec::with_capacity(b2.dim());
    for (j, v) in b2.0.iter().enumerate() {
        let radicand = v + shift;
        if !(radicand > 0.0) {
            return Err(Error::Domain(format!(
                "nonpositive radicand {radicand} at coordinate {j}"
            )));
        }
        out.push(1.0 / radicand.sqrt());
    }
    finite(ParamVector(out))
}

/// Coordinate-wise arithmetic mean, summed in list order.
pub fn average<'a, I>(vs: I) -> Result<ParamVector>
where
    I: IntoIterator<Item = &'a ParamVector>,
{
    let mut iter = vs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Usage("cannot average an empty list".into()))?;
    let mut sum = first.0.clone();
    let mut count = 1usize;
    for v in iter {
        v.check_dim(sum.len())?;
        for (s, x) in sum.iter_mut().zip(&v.0) {
            *s += x;
        }
        count += 1;
    }
    let n = count as f64;
    for s in sum.iter_mut() {
        *s /= n;
    }
    finite(ParamVector(sum))
}
