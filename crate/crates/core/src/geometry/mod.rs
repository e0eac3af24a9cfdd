//! Reduced geometric backends and their discrete differential operators.
//!
//! Two charts are provided:
//!
//! * **Torus**: the flat complex torus `C^n / (Z^n + i Z^n)` with potentials
//!   depending only on the real parts `x_i` of the coordinates. Forms are
//!   real symmetric, the reference metric is the identity (volume 1), the
//!   Ricci form of the reference metric vanishes and the holomorphic field
//!   `X` is zero.
//! * **Sphere**: `CP^1` with circle-invariant potentials, written in the
//!   coordinate `s = log |z|^2` truncated to `[-S, S]`. The reference metric
//!   is Fubini–Study with potential `log(1 + e^s)` and area `π`; `X = z ∂/∂z`
//!   with holomorphic potential `θ_X(χ0) = m - 1/2` where `m = e^s / (1 + e^s)`
//!   is the moment coordinate.
//!
//! On the sphere, metric coefficients are expressed in the frame `w = log z`,
//! where the coefficient of `(i/2) dw ∧ dw̄` of `(i/2)∂∂̄ f(s)` is `f''(s)` and
//! `X(f) = f'(s)`. The volume form `χ^n/n!` integrates as `π ∫ (·) ds`.
//!
//! The sphere grid is conservative: nodes `s_j` own cells bounded by the
//! half points `s_{j±1/2}`; the two end cells extend to the poles. The moment
//! of the total potential is stored on half points, with the pole values
//! `0` and `1` as fixed ghosts. Every discrete integral of a complex Hessian
//! of a smooth potential then telescopes to zero exactly, and
//! `∫ θ_X(χ_φ) χ_φ = 0` holds exactly for every `φ`.

pub mod fields;
pub mod linalg;
pub mod ops;
pub mod potentials;

use serde::{Deserialize, Serialize};

pub use fields::{HermitianFormField, Normalization, PotentialField, ScalarField};
pub use ops::*;

use crate::error::{JflowError, Result};

/// Default floor used for the `kahler_metric` flag.
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-10;

/// Default chart truncation `|s| <= S` on the sphere.
pub const DEFAULT_SPHERE_TRUNCATION: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Torus,
    Sphere,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::Torus => "torus",
            BackendKind::Sphere => "sphere",
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SphereChart {
    pub ds: f64,
    /// Cell length `ω_j` in units of `s` (interior `ds`, poles `e^{ds/2}`).
    pub cell: Vec<f64>,
    /// Fubini–Study moment at the `N + 1` half points, ghosts `0` and `1` included.
    /// Fubini–Study moment at the nodes.
    pub moment: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GeometryBackend {
    kind: BackendKind,
    n: usize,
    shape: Vec<usize>,
    spacing: Vec<f64>,
    coords: Vec<Vec<f64>>,
    weights: Vec<f64>,
    chi0: HermitianFormField,
    theta0: ScalarField,
    volume: f64,
    truncation: Option<f64>,
    pub(crate) sphere: Option<SphereChart>,
    positivity_floor: f64,
}

/// Numerically stable logistic function `e^s / (1 + e^s)`.
pub fn logistic(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// Fubini–Study chart potential `log(1 + e^s)`.
pub fn fubini_study_potential(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

impl GeometryBackend {
    /// Flat torus of complex dimension `n` with `points` grid points per axis.
    pub fn torus(n: usize, points: usize) -> Result<Self> {
        Self::torus_with_shape(vec![points; n])
    }

    pub fn torus_with_shape(shape: Vec<usize>) -> Result<Self> {
        let n = shape.len();
        if n == 0 {
            return Err(JflowError::Config("torus dimension must be positive".into()));
        }
        if let Some(&p) = shape.iter().find(|&&p| p < 4) {
            return Err(JflowError::Config(format!("torus needs at least 4 points per axis, got {p}")));
        }
        let spacing: Vec<f64> = shape.iter().map(|&p| 1.0 / p as f64).collect();
        let coords: Vec<Vec<f64>> =
            shape.iter().zip(&spacing).map(|(&p, &h)| (0..p).map(|k| k as f64 * h).collect()).collect();
        let len: usize = shape.iter().product();
        let cell: f64 = spacing.iter().product();
        let chi0 = HermitianFormField::uniform(n, len, &linalg::identity(n)).flag_positivity(DEFAULT_POSITIVITY_FLOOR);
        Ok(Self {
            kind: BackendKind::Torus,
            n,
            shape,
            spacing,
            coords,
            weights: vec![cell; len],
            chi0,
            theta0: ScalarField::constant(len, 0.0),
            volume: 1.0,
            truncation: None,
            sphere: None,
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
        })
    }

    /// Fubini–Study sphere on `points` nodes of `s ∈ [-truncation, truncation]`.
    pub fn sphere(points: usize, truncation: f64) -> Result<Self> {
        if points < 5 {
            return Err(JflowError::Config(format!("sphere needs at least 5 grid points, got {points}")));
        }
        if !(truncation > 0.0 && truncation.is_finite()) {
            return Err(JflowError::Config(format!("sphere truncation must be positive, got {truncation}")));
        }
        let ds = 2.0 * truncation / (points - 1) as f64;
        let s: Vec<f64> = (0..points).map(|j| -truncation + j as f64 * ds).collect();
        let mut moment_half = Vec::with_capacity(points + 1);
        moment_half.push(0.0);
        moment_half.extend(s[..points - 1].iter().map(|s| logistic(s + 0.5 * ds)));
        moment_half.push(1.0);
        let end_cell = (0.5 * ds).exp();
        let cell: Vec<f64> = (0..points).map(|j| if j == 0 || j == points - 1 { end_cell } else { ds }).collect();
        let g0: Vec<f64> = (0..points).map(|j| (moment_half[j + 1] - moment_half[j]) / cell[j]).collect();
        let theta0: Vec<f64> = (0..points).map(|j| 0.5 * (moment_half[j] + moment_half[j + 1]) - 0.5).collect();
        let weights: Vec<f64> = cell.iter().map(|c| std::f64::consts::PI * c).collect();
        let moment = s.iter().map(|&x| logistic(x)).collect();
        let chi0 = HermitianFormField::from_density(g0).flag_positivity(DEFAULT_POSITIVITY_FLOOR);
        let backend = Self {
            kind: BackendKind::Sphere,
            n: 1,
            shape: vec![points],
            spacing: vec![ds],
            coords: vec![s],
            weights,
            chi0,
            theta0: ScalarField::new(theta0),
            volume: std::f64::consts::PI,
            truncation: Some(truncation),
            sphere: Some(SphereChart { ds, cell, moment }),
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
        };
        let mean_theta = integrate(&backend.theta0, &backend.chi0, &backend);
        if mean_theta.abs() > 1e-10 {
            return Err(JflowError::Config(format!("θ_X(χ0) normalization violated: {mean_theta:e}")));
        }
        Ok(backend)
    }

    pub fn with_positivity_floor(mut self, floor: f64) -> Self {
        self.positivity_floor = floor;
        self
    }

    pub fn kind(&self) -> BackendKind {
        self.kind
    }

    /// Complex dimension.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Smallest grid spacing, the `h` entering `O(h^2)` tolerances.
    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn coordinates(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn chi0(&self) -> &HermitianFormField {
        &self.chi0
    }

    /// `θ_X(χ0)` with zero χ0-average.
    pub fn theta0(&self) -> &ScalarField {
        &self.theta0
    }

    /// Declared total volume `∫ χ0^n / n!`.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn positivity_floor(&self) -> f64 {
        self.positivity_floor
    }

    /// Whether the holomorphic field `X` vanishes identically.
    pub fn has_trivial_field(&self) -> bool {
        self.kind == BackendKind::Torus
    }

    /// Fubini–Study moment coordinate at the nodes (sphere only).
    pub fn moment(&self) -> Option<&[f64]> {
        self.sphere.as_ref().map(|c| c.moment.as_slice())
    }

    /// Reference volume density times quadrature weight, per point.
    pub fn reference_measure(&self) -> Vec<f64> {
        self.chi0.determinants().iter().zip(&self.weights).map(|(d, w)| d * w).collect()
    }

    /// Multi-index of a flat grid index (torus, axis 0 slowest).
    pub fn multi_index(&self, mut p: usize) -> Vec<usize> {
        let mut idx = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            idx[axis] = p % self.shape[axis];
            p /= self.shape[axis];
        }
        idx
    }

    /// Periodic neighbour of `p` shifted by `step` along `axis` (torus).
    pub(crate) fn shifted(&self, p: usize, axis: usize, step: isize) -> usize {
        let stride: usize = self.shape[axis + 1..].iter().product();
        let size = self.shape[axis] as isize;
        let k = ((p / stride) % self.shape[axis]) as isize;
        let k_new = (k + step).rem_euclid(size);
        (p as isize + (k_new - k) * stride as isize) as usize
    }

    /// Real coordinates of grid point `p`.
    pub fn point(&self, p: usize) -> Vec<f64> {
        self.multi_index(p).iter().enumerate().map(|(axis, &k)| self.coords[axis][k]).collect()
    }

    pub(crate) fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(JflowError::ShapeMismatch { expected: self.len(), got });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_neighbours_wrap() {
        let b = GeometryBackend::torus(2, 4).unwrap();
        assert_eq!(b.shifted(0, 0, -1), 12);
        assert_eq!(b.shifted(0, 1, -1), 3);
        assert_eq!(b.shifted(5, 1, 1), 6);
        assert_eq!(b.multi_index(6), vec![1, 2]);
    }

    #[test]
    fn weights_positive_and_volumes_match() {
        for b in [
            GeometryBackend::torus(1, 64).unwrap(),
            GeometryBackend::torus(2, 16).unwrap(),
            GeometryBackend::sphere(257, 12.0).unwrap(),
            GeometryBackend::sphere(64, 6.0).unwrap(),
        ] {
            assert!(b.weights().iter().all(|&w| w > 0.0));
            let vol: f64 = b.reference_measure().iter().sum();
            assert!((vol - b.volume()).abs() <= 1e-10 * b.volume(), "{vol} vs {}", b.volume());
        }
    }

    #[test]
    fn sphere_theta0_range() {
        let b = GeometryBackend::sphere(513, 12.0).unwrap();
        assert!((b.theta0().min() + 0.5).abs() < 1e-4);
        assert!((b.theta0().max() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn sphere_reference_density_matches_fubini_study() {
        let b = GeometryBackend::sphere(257, 12.0).unwrap();
        let h = b.min_spacing();
        for (j, &s) in b.coordinates(0).iter().enumerate() {
            let m = logistic(s);
            let exact = m * (1.0 - m);
            let got = b.chi0().at(j)[0];
            assert!((got - exact).abs() <= 0.1 * h * h * exact, "j={j}: {got} vs {exact}");
        }
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GeometryBackend::torus(0, 16).is_err());
        assert!(GeometryBackend::torus(1, 2).is_err());
        assert!(GeometryBackend::sphere(3, 12.0).is_err());
        assert!(GeometryBackend::sphere(64, -1.0).is_err());
    }
}
