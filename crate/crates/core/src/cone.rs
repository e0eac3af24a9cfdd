//! Cone (subsolution) conditions and class-level properness hypotheses.
//!
//! Class data convention: `πc₁(M)` is represented by `Ric(χ0)`, so
//! `ω0 = −Ric(χ0)` is a representative of `−πc₁(M)`.

use std::collections::BTreeMap;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{JflowError, Result};
use crate::functionals::level_constant;
use crate::geometry::{
    build_metric, linalg, ricci_form, theta_of, GeometryBackend, HermitianFormField, PotentialField, ScalarField,
};

/// Tolerance separating strict, boundary and failing margins.
pub const MARGIN_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RelativeSpectrum {
    pub n: usize,
    /// Sorted eigenvalues of `ω` relative to `χ′`, `n` per point.
    pub mu: Vec<f64>,
    /// Sorted eigenvalues of `χ` relative to `χ0`, when requested.
    pub lambda: Option<Vec<f64>>,
    /// Largest `‖ω − χ′ V diag(μ) Vᵀ χ′‖` over the grid.
    pub reconstruction_error: f64,
}

impl RelativeSpectrum {
    pub fn at(&self, p: usize) -> &[f64] {
        &self.mu[p * self.n..(p + 1) * self.n]
    }

    pub fn len(&self) -> usize {
        self.mu.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }
}

/// Per-point eigen-decomposition of `a` in a `b`-orthonormal frame, with
/// the reconstruction residual.
fn generalized_eigen(n: usize, a: &[f64], b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let bd = linalg::to_dense(n, b);
    let chol = bd.clone().cholesky()?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse()?;
    let c = &l_inv * linalg::to_dense(n, a) * l_inv.transpose();
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    // ω = B V Λ Vᵀ B with V = L⁻ᵀ Y
    let v = l_inv.transpose() * &eig.eigenvectors;
    let rebuilt = &bd * &v * nalgebra::DMatrix::from_diagonal(&eig.eigenvalues) * v.transpose() * &bd;
    let err = (rebuilt - linalg::to_dense(n, a)).amax();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Some((ev, err))
}

pub fn relative_spectrum(omega: &HermitianFormField, chi_prime: &HermitianFormField) -> Result<RelativeSpectrum> {
    if omega.len() != chi_prime.len() {
        return Err(JflowError::ShapeMismatch { expected: chi_prime.len(), got: omega.len() });
    }
    chi_prime.require_kahler(0.0)?;
    let n = chi_prime.dim();
    let mut mu = Vec::with_capacity(n * omega.len());
    let mut worst = 0.0f64;
    for p in 0..omega.len() {
        let (ev, err) = generalized_eigen(n, omega.at(p), chi_prime.at(p))
            .ok_or(JflowError::NotKahler { index: p, min_eigenvalue: linalg::min_eigenvalue(n, chi_prime.at(p)) })?;
        mu.extend(ev);
        worst = worst.max(err);
    }
    Ok(RelativeSpectrum { n, mu, lambda: None, reconstruction_error: worst })
}

/// Relative spectrum of `ω` against `χ′`, together with the eigenvalues of `χ` against `χ0`.
pub fn relative_spectrum_with_metric(
    omega: &HermitianFormField,
    chi_prime: &HermitianFormField,
    chi: &HermitianFormField,
    chi0: &HermitianFormField,
) -> Result<RelativeSpectrum> {
    let mut spec = relative_spectrum(omega, chi_prime)?;
    spec.lambda = Some(relative_spectrum(chi, chi0)?.mu);
    Ok(spec)
}

/// `min_{p,k} [nc + θ(p) − Σ_{i≠k} μ_i(p)]`.
pub fn subsolution_margin(
    chi_prime: &HermitianFormField,
    omega: &HermitianFormField,
    c: f64,
    theta: &ScalarField,
) -> Result<f64> {
    if theta.len() != chi_prime.len() {
        return Err(JflowError::ShapeMismatch { expected: chi_prime.len(), got: theta.len() });
    }
    let spec = relative_spectrum(omega, chi_prime)?;
    let n = spec.n as f64;
    Ok((0..spec.len())
        .map(|p| {
            let mu = spec.at(p);
            let total: f64 = mu.iter().sum();
            n * c + theta.values[p] - (total - mu[0])
        })
        .fold(f64::INFINITY, f64::min))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginClass {
    Strict,
    Boundary,
    Fails,
}

impl MarginClass {
    pub fn of(margin: f64) -> Self {
        if margin > MARGIN_TOLERANCE {
            Self::Strict
        } else if margin >= -MARGIN_TOLERANCE {
            Self::Boundary
        } else {
            Self::Fails
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub condition_margins: BTreeMap<String, f64>,
    pub pass: BTreeMap<String, bool>,
    pub classification: BTreeMap<String, MarginClass>,
    pub epsilon: f64,
    pub alpha_lower_bound: f64,
    pub min_theta: f64,
    /// Level constant of the reference form the subsolution check used.
    pub c: f64,
    /// Level constant of `Ric(χ0)`.
    pub c_ricci: f64,
    pub n: usize,
}

impl HypothesisReport {
    fn insert(&mut self, name: &str, margin: f64) {
        self.condition_margins.insert(name.into(), margin);
        self.pass.insert(name.into(), margin > 0.0);
        self.classification.insert(name.into(), MarginClass::of(margin));
    }

    pub fn margin(&self, name: &str) -> Option<f64> {
        self.condition_margins.get(name).copied()
    }

    pub fn passes(&self, name: &str) -> bool {
        self.pass.get(name).copied().unwrap_or(false)
    }
}

fn min_relative_eigenvalue(form: &HermitianFormField, reference: &HermitianFormField) -> Result<f64> {
    let spec = relative_spectrum(form, reference)?;
    Ok((0..spec.len()).map(|p| spec.at(p)[0]).fold(f64::INFINITY, f64::min))
}

/// Checks conditions (1)–(3) of the properness theorem, the derived claim
/// `nc + min θ > 0`, and the subsolution condition for a representative.
///
/// `omega_rep` defaults to `εχ0 − Ric(χ0)`; `chi_prime` is a potential
/// for the candidate subsolution `χ′ = χ0 + (i/2)∂∂̄ψ` and defaults to `0`.
pub fn properness_hypotheses(
    b: &GeometryBackend,
    omega_rep: Option<&HermitianFormField>,
    chi_prime: Option<&PotentialField>,
    epsilon: f64,
    alpha_lower_bound: f64,
) -> Result<HypothesisReport> {
    let n = b.dim();
    let nf = n as f64;
    let chi0 = b.chi0();
    let min_theta = b.theta0().min();
    let ric = ricci_form(chi0, b)?;
    let c_ricci = level_constant(&ric, b)?;
    let default_omega;
    let omega = match omega_rep {
        Some(w) => w,
        None => {
            default_omega = chi0.scaled(epsilon).axpy(-1.0, &ric);
            &default_omega
        }
    };
    let c = level_constant(omega, b)?;

    let mut report = HypothesisReport {
        condition_margins: BTreeMap::new(),
        pass: BTreeMap::new(),
        classification: BTreeMap::new(),
        epsilon,
        alpha_lower_bound,
        min_theta,
        c,
        c_ricci,
        n,
    };

    let cond1 = if epsilon < 0.0 { epsilon } else { (nf + 1.0) / nf * alpha_lower_bound - epsilon };
    report.insert("condition_1", cond1);

    let cond2 = chi0.scaled(epsilon + min_theta).axpy(-1.0, &ric);
    report.insert("condition_2", min_relative_eigenvalue(&cond2, chi0)?);

    let cond3 = chi0.scaled(-nf * c_ricci + min_theta + epsilon).axpy(nf - 1.0, &ric);
    report.insert("condition_3", min_relative_eigenvalue(&cond3, chi0)?);

    report.insert("derived_nc_plus_min_theta", nf * (epsilon - c_ricci) + min_theta);

    let zero = PotentialField::zeros(b.len());
    let psi = chi_prime.unwrap_or(&zero);
    let chi_p = build_metric(psi, b)?;
    if chi_p.is_kahler_metric() {
        let theta = theta_of(psi, b)?;
        let margin = subsolution_margin(&chi_p, omega, c, &theta)?;
        report.insert("subsolution", margin);
        report.insert("subsolution_strengthened", margin - 2.0 * epsilon);
    } else {
        report.insert("subsolution", f64::NEG_INFINITY);
    }
    Ok(report)
}
