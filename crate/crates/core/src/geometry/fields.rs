use serde::{Deserialize, Serialize};

use super::linalg;
use crate::error::{JflowError, Result};

/// Convention used to fix the additive constant of a potential.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Zero average against the reference volume form.
    #[default]
    MeanZero,
    /// Zero maximum.
    SupZero,
}

/// Grid-sampled real Kähler potential.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    values: Vec<f64>,
    pub normalization: Normalization,
}

impl PotentialField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(JflowError::Config(format!("potential value at grid point {i} is not finite")));
        }
        Ok(Self { values, normalization: Normalization::MeanZero })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len], normalization: Normalization::MeanZero }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self { values: vec![value; len], normalization: Normalization::MeanZero }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn add_constant(&self, c: f64) -> Self {
        Self { values: self.values.iter().map(|v| v + c).collect(), normalization: self.normalization }
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self { values: self.values.iter().map(|v| t * v).collect(), normalization: self.normalization }
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &PotentialField) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + t * b).collect();
        Self { values, normalization: self.normalization }
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &PotentialField, t: f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + t * (b - a)).collect();
        Self { values, normalization: self.normalization }
    }

    /// Shift by a constant so that the chosen normalization holds. The
    /// average uses `weights` (the reference volume density times
    /// quadrature weights).
    pub fn renormalized(&self, weights: &[f64]) -> Self {
        let shift = match self.normalization {
            Normalization::MeanZero => {
                let total: f64 = weights.iter().sum();
                let mean: f64 = self.values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total;
                -mean
            }
            Normalization::SupZero => -self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        };
        self.add_constant(shift)
    }
}

/// Real scalar sampled on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self { values: vec![value; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-point `n x n` real symmetric matrix `h_{i\bar j}` of a (1,1)-form
/// `(i/2) h_{i\bar j} dz^i ∧ dz̄^j`.
///
/// Both reduced backends only produce forms whose imaginary parts vanish,
/// so the Hermitian matrices are stored as real symmetric packed blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianFormField {
    n: usize,
    data: Vec<f64>,
    kahler_metric: bool,
}

impl HermitianFormField {
    pub fn from_packed(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % linalg::packed_len(n), 0, "packed data length");
        Self { n, data, kahler_metric: false }
    }

    /// Scalar density field for `n = 1`.
    pub fn from_density(values: Vec<f64>) -> Self {
        Self::from_packed(1, values)
    }

    pub fn uniform(n: usize, len: usize, block: &[f64]) -> Self {
        assert_eq!(block.len(), linalg::packed_len(n));
        let mut data = Vec::with_capacity(len * block.len());
        for _ in 0..len {
            data.extend_from_slice(block);
        }
        Self::from_packed(n, data)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.data.len() / linalg::packed_len(self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, p: usize) -> &[f64] {
        let k = linalg::packed_len(self.n);
        &self.data[p * k..(p + 1) * k]
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn entry(&self, p: usize, i: usize, j: usize) -> f64 {
        self.at(p)[linalg::packed_index(self.n, i, j)]
    }

    pub fn is_kahler_metric(&self) -> bool {
        self.kahler_metric
    }

    /// Set the `kahler_metric` flag from a pointwise eigenvalue test.
    pub fn flag_positivity(mut self, floor: f64) -> Self {
        self.kahler_metric = self.min_eigenvalue().map(|(_, v)| v > floor).unwrap_or(false);
        self
    }

    /// Smallest eigenvalue over the whole field, with its grid index.
    pub fn min_eigenvalue(&self) -> Option<(usize, f64)> {
        (0..self.len()).map(|p| (p, linalg::min_eigenvalue(self.n, self.at(p)))).min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Fails with `NotKahler` unless every point is positive definite above `floor`.
    pub fn require_kahler(&self, floor: f64) -> Result<()> {
        match self.min_eigenvalue() {
            Some((index, v)) if v <= floor || !v.is_finite() => Err(JflowError::NotKahler { index, min_eigenvalue: v }),
            _ => Ok(()),
        }
    }

    pub fn determinants(&self) -> Vec<f64> {
        (0..self.len()).map(|p| linalg::det(self.n, self.at(p))).collect()
    }

    pub fn add(&self, other: &HermitianFormField) -> Self {
        assert_eq!(self.n, other.n);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Self::from_packed(self.n, data)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self::from_packed(self.n, self.data.iter().map(|v| t * v).collect())
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &HermitianFormField) -> Self {
        assert_eq!(self.n, other.n);
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + t * b).collect();
        Self::from_packed(self.n, data)
    }

    /// Pointwise `a(p) * self + b(p) * other`.
    pub fn combine(&self, a: &[f64], other: &HermitianFormField, b: &[f64]) -> Self {
        assert_eq!(self.n, other.n);
        let k = linalg::packed_len(self.n);
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .enumerate()
            .map(|(idx, (x, y))| a[idx / k] * x + b[idx / k] * y)
            .collect();
        Self::from_packed(self.n, data)
    }

    pub fn max_abs_diff(&self, other: &HermitianFormField) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}
