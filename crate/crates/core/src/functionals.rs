//! Energy functionals on Kähler potentials.
//!
//! Measure conventions (every integral below is a quadrature sum of
//! `f · det χ · weight`, i.e. against `χ^n / n!`):
//!
//! | functional | integrand                                                        |
//! |------------|------------------------------------------------------------------|
//! | `c`        | `∫ Λ_{χ0} ω χ0^n/n!  /  (n ∫ χ0^n/n!)`                            |
//! | `I`        | `∫ φ (χ0^n − χ_φ^n)/n!`                                           |
//! | `J`        | `∫_0^1 ∫ φ̇ (χ0^n − χ_t^n)/n! dt`                                  |
//! | `Ĵ_ω`      | `∫_0^1 ∫ φ̇ (ω∧χ_t^{n−1} − c χ_t^n)/(n−1)! dt = ∫∫ φ̇ (Λ_{χ_t}ω − nc) χ_t^n/n!` |
//! | `J̃_ω`      | `Ĵ_ω + ∫_0^1 ∫ φ̇ θ_X(χ_t) χ_t^n/n! dt`                           |
//! | entropy    | `∫ log(χ_φ^n/χ0^n) χ_φ^n/n!`                                      |
//! | `μ`, `μ̃`   | entropy `+ Ĵ_{ω0}`, entropy `+ J̃_{ω0}` with `ω0 = −Ric(χ0)`       |
//! | `E`        | `∫ σ² χ_φ^n/n!`, `σ = θ_X(χ_φ) − Λ_{χ_φ} ω`                        |
//!
//! Path integrals use composite Simpson in `t` on each linear segment.

use serde::{Deserialize, Serialize};

use crate::error::{JflowError, Result};
use crate::geometry::{
    build_metric, integrate, kahler_metric, linalg, reference_ricci_potential_form, theta_of, total_volume, trace_with,
    GeometryBackend, HermitianFormField, PotentialField, ScalarField,
};

pub const DEFAULT_PATH_STEPS: usize = 33;

/// Composite Simpson rule on `[0, 1]` with an odd number of nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathQuadrature {
    nodes: usize,
}

impl Default for PathQuadrature {
    fn default() -> Self {
        Self { nodes: DEFAULT_PATH_STEPS }
    }
}

impl PathQuadrature {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes < 3 || nodes.is_multiple_of(2) {
            return Err(JflowError::Config(format!("path_steps must be odd and >= 3, got {nodes}")));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Same rule with the interval count doubled.
    pub fn refined(&self) -> Self {
        Self { nodes: 2 * self.nodes - 1 }
    }

    pub fn integrate<F: FnMut(f64) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        let intervals = self.nodes - 1;
        let h = 1.0 / intervals as f64;
        let mut acc = 0.0;
        for k in 0..self.nodes {
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * f(k as f64 * h)?;
        }
        Ok(acc * h / 3.0)
    }
}

/// Piecewise-linear path in potential space.
#[derive(Clone, Debug)]
pub struct PotentialPath {
    pub vertices: Vec<PotentialField>,
}

impl PotentialPath {
    /// The straight path `t ↦ tφ` from `0`.
    pub fn linear(phi: &PotentialField) -> Self {
        Self { vertices: vec![PotentialField::zeros(phi.len()), phi.clone()] }
    }

    pub fn through(vertices: Vec<PotentialField>) -> Self {
        Self { vertices }
    }

    /// `∫_0^1 ∫ φ̇ · density(φ_t, χ_t) dt` summed over segments.
    fn integrate<F>(&self, b: &GeometryBackend, quad: PathQuadrature, mut density: F) -> Result<f64>
    where
        F: FnMut(&PotentialField, &HermitianFormField) -> Result<Vec<f64>>,
    {
        let mut total = 0.0;
        for seg in self.vertices.windows(2) {
            let velocity = seg[1].axpy(-1.0, &seg[0]);
            total += quad.integrate(|t| {
                let phi_t = seg[0].lerp(&seg[1], t);
                let chi_t = kahler_metric(&phi_t, b)?;
                let dens = density(&phi_t, &chi_t)?;
                let det = chi_t.determinants();
                Ok(velocity
                    .values()
                    .iter()
                    .zip(&dens)
                    .zip(&det)
                    .zip(b.weights())
                    .map(|(((v, d), g), w)| v * d * g * w)
                    .sum())
            })?;
        }
        Ok(total)
    }
}

/// `c = [ω][χ0]^{n−1} / [χ0]^n`.
pub fn level_constant(omega: &HermitianFormField, b: &GeometryBackend) -> Result<f64> {
    let lambda = trace_with(b.chi0(), omega)?;
    Ok(integrate(&lambda, b.chi0(), b) / (b.dim() as f64 * total_volume(b.chi0(), b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AubinYau {
    pub i: f64,
    pub j: f64,
    /// `I − J` by subtraction.
    pub i_minus_j: f64,
    /// `I − J` from its own path formula `∫∫ φ̇ (Λ_{χ_t}χ0 − n) χ_t^n/n!`.
    pub i_minus_j_path: f64,
}

/// Aubin–Yau `I` and `J` along the straight path.
pub fn aubin_ij(phi: &PotentialField, b: &GeometryBackend, quad: PathQuadrature) -> Result<AubinYau> {
    aubin_ij_along(&PotentialPath::linear(phi), b, quad)
}

pub fn aubin_ij_along(path: &PotentialPath, b: &GeometryBackend, quad: PathQuadrature) -> Result<AubinYau> {
    let end = path.vertices.last().expect("non-empty path");
    let chi = kahler_metric(end, b)?;
    let det0 = b.chi0().determinants();
    let det = chi.determinants();
    let i: f64 =
        end.values().iter().zip(det0.iter().zip(&det)).zip(b.weights()).map(|((v, (d0, d)), w)| v * (d0 - d) * w).sum();
    let j = path.integrate(b, quad, |_, chi_t| {
        let dt = chi_t.determinants();
        Ok(det0.iter().zip(&dt).map(|(d0, d)| d0 / d - 1.0).collect())
    })?;
    let n = b.dim() as f64;
    let i_minus_j_path = path
        .integrate(b, quad, |_, chi_t| Ok(trace_with(chi_t, b.chi0())?.values.into_iter().map(|l| l - n).collect()))?;
    Ok(AubinYau { i, j, i_minus_j: i - j, i_minus_j_path })
}

/// `Ĵ_ω` / `J̃_ω` evaluator for a fixed reference form.
#[derive(Clone, Debug)]
pub struct JFunctional<'a> {
    pub backend: &'a GeometryBackend,
    pub omega: HermitianFormField,
    pub c: f64,
    pub quad: PathQuadrature,
}

impl<'a> JFunctional<'a> {
    pub fn new(omega: HermitianFormField, backend: &'a GeometryBackend, quad: PathQuadrature) -> Result<Self> {
        backend.check_len(omega.len())?;
        let c = level_constant(&omega, backend)?;
        Ok(Self { backend, omega, c, quad })
    }

    pub fn j_hat_along(&self, path: &PotentialPath) -> Result<f64> {
        let nc = self.backend.dim() as f64 * self.c;
        path.integrate(self.backend, self.quad, |_, chi_t| {
            Ok(trace_with(chi_t, &self.omega)?.values.into_iter().map(|l| l - nc).collect())
        })
    }

    /// The `θ_X` coupling `∫_0^1 ∫ φ̇ θ_X(χ_t) χ_t^n/n! dt`.
    pub fn theta_term_along(&self, path: &PotentialPath) -> Result<f64> {
        path.integrate(self.backend, self.quad, |phi_t, _| Ok(theta_of(phi_t, self.backend)?.values))
    }

    pub fn j_tilde_along(&self, path: &PotentialPath) -> Result<f64> {
        let hat = self.j_hat_along(path)?;
        if self.backend.has_trivial_field() {
            return Ok(hat);
        }
        Ok(hat + self.theta_term_along(path)?)
    }

    pub fn j_hat(&self, phi: &PotentialField) -> Result<f64> {
        self.j_hat_along(&PotentialPath::linear(phi))
    }

    pub fn j_tilde(&self, phi: &PotentialField) -> Result<f64> {
        self.j_tilde_along(&PotentialPath::linear(phi))
    }
}

pub fn j_hat(omega: &HermitianFormField, phi: &PotentialField, b: &GeometryBackend) -> Result<f64> {
    JFunctional::new(omega.clone(), b, PathQuadrature::default())?.j_hat(phi)
}

pub fn j_tilde(omega: &HermitianFormField, phi: &PotentialField, b: &GeometryBackend) -> Result<f64> {
    JFunctional::new(omega.clone(), b, PathQuadrature::default())?.j_tilde(phi)
}

/// `∫ log(χ_φ^n/χ0^n) χ_φ^n/n!`.
pub fn entropy(phi: &PotentialField, b: &GeometryBackend) -> Result<f64> {
    let chi = kahler_metric(phi, b)?;
    let det0 = b.chi0().determinants();
    Ok(chi.determinants().iter().zip(&det0).zip(b.weights()).map(|((d, d0), w)| d * (d / d0).ln() * w).sum())
}

/// K-energy `μ` and modified K-energy `μ̃`.
pub fn k_energy_modified(phi: &PotentialField, b: &GeometryBackend, quad: PathQuadrature) -> Result<(f64, f64)> {
    let ent = entropy(phi, b)?;
    let jf = JFunctional::new(reference_ricci_potential_form(b)?, b, quad)?;
    let path = PotentialPath::linear(phi);
    let hat = jf.j_hat_along(&path)?;
    let tilde = if b.has_trivial_field() { hat } else { hat + jf.theta_term_along(&path)? };
    Ok((ent + hat, ent + tilde))
}

/// `σ = θ_X(χ_φ) − Λ_{χ_φ} ω` and `E = ∫ σ² χ_φ^n/n!`.
pub fn sigma_energy(
    phi: &PotentialField,
    omega: &HermitianFormField,
    b: &GeometryBackend,
) -> Result<(ScalarField, f64)> {
    let chi = kahler_metric(phi, b)?;
    let theta = theta_of(phi, b)?;
    let lambda = trace_with(&chi, omega)?;
    let sigma = ScalarField::new(theta.values.iter().zip(&lambda.values).map(|(t, l)| t - l).collect());
    let sq = ScalarField::new(sigma.values.iter().map(|s| s * s).collect());
    let e = integrate(&sq, &chi, b);
    Ok((sigma, e))
}

/// All functionals at one potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub c: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub j_hat: f64,
    pub j_tilde: f64,
    pub entropy: f64,
    pub k_energy: f64,
    pub k_energy_modified: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub path_steps: usize,
    pub quadrature_rule: String,
    /// Largest change of a path functional when the Simpson node count is doubled.
    pub richardson_delta: f64,
    /// `χ_φ`-average of `σ`, recorded next to `−nc` (they agree at critical points).
    pub sigma_mean: f64,
    pub minus_nc: f64,
}

pub fn evaluate_all(
    phi: &PotentialField,
    omega: &HermitianFormField,
    b: &GeometryBackend,
    quad: PathQuadrature,
) -> Result<FunctionalReport> {
    let jf = JFunctional::new(omega.clone(), b, quad)?;
    let fine = JFunctional { quad: quad.refined(), ..jf.clone() };
    let ay = aubin_ij(phi, b, quad)?;
    let ay_fine = aubin_ij(phi, b, quad.refined())?;
    let j_hat = jf.j_hat(phi)?;
    let j_tilde = jf.j_tilde(phi)?;
    let entropy = entropy(phi, b)?;
    let (k_energy, k_energy_modified) = k_energy_modified(phi, b, quad)?;
    let (sigma, e) = sigma_energy(phi, omega, b)?;
    let chi = build_metric(phi, b)?;
    let sigma_mean = integrate(&sigma, &chi, b) / total_volume(&chi, b);
    let richardson_delta =
        [(ay.j - ay_fine.j).abs(), (j_hat - fine.j_hat(phi)?).abs(), (j_tilde - fine.j_tilde(phi)?).abs()]
            .into_iter()
            .fold(0.0, f64::max);
    Ok(FunctionalReport {
        c: jf.c,
        i: ay.i,
        j: ay.j,
        j_hat,
        j_tilde,
        entropy,
        k_energy,
        k_energy_modified,
        e,
        path_steps: quad.nodes(),
        quadrature_rule: "composite-simpson".into(),
        richardson_delta,
        sigma_mean,
        minus_nc: -(b.dim() as f64) * jf.c,
    })
}

/// Smallest eigenvalue of `χ` relative to `ω` over the grid.
pub fn min_relative_eigenvalue(chi: &HermitianFormField, omega: &HermitianFormField) -> f64 {
    let n = chi.dim();
    if n == 1 {
        return chi
            .packed()
            .iter()
            .zip(omega.packed())
            .filter(|(_, w)| **w > 0.0)
            .map(|(c, w)| c / w)
            .fold(f64::INFINITY, f64::min);
    }
    (0..chi.len())
        .filter_map(|p| linalg::generalized_eigenvalues(n, chi.at(p), omega.at(p)).map(|ev| ev[0]))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::potentials::PotentialExpr;
    use std::f64::consts::PI;

    fn torus_sine(points: usize, a: f64) -> (GeometryBackend, PotentialField) {
        let b = GeometryBackend::torus(1, points).unwrap();
        let phi = format!("sine({a}, 1)").parse::<PotentialExpr>().unwrap().sample(&b).unwrap();
        (b, phi)
    }

    #[test]
    fn simpson_exact_on_cubics() {
        let q = PathQuadrature::new(5).unwrap();
        let v = q.integrate(|t| Ok(4.0 * t * t * t - t + 2.0)).unwrap();
        assert!((v - 2.5).abs() < 1e-15);
        assert!(PathQuadrature::new(4).is_err());
    }

    #[test]
    fn level_constant_examples() {
        let t = GeometryBackend::torus(1, 32).unwrap();
        assert!((level_constant(t.chi0(), &t).unwrap() - 1.0).abs() < 1e-14);
        assert!((level_constant(&t.chi0().scaled(2.0), &t).unwrap() - 2.0).abs() < 1e-14);
        let s = GeometryBackend::sphere(129, 12.0).unwrap();
        let psi = "moment_cos(0.2, 2) + moment_poly(0.1, 3)".parse::<PotentialExpr>().unwrap().sample(&s).unwrap();
        let omega = build_metric(&psi, &s).unwrap();
        assert!((level_constant(&omega, &s).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn constants_have_zero_energy() {
        let b = GeometryBackend::torus(2, 12).unwrap();
        let phi = PotentialField::constant(b.len(), 3.0);
        let ay = aubin_ij(&phi, &b, PathQuadrature::default()).unwrap();
        assert!(ay.i.abs() < 1e-13 && ay.j.abs() < 1e-13);
        assert!(j_hat(b.chi0(), &phi, &b).unwrap().abs() < 1e-13);
        let s = GeometryBackend::sphere(65, 10.0).unwrap();
        let k = PotentialField::constant(s.len(), 1.5);
        assert!(j_tilde(s.chi0(), &k, &s).unwrap().abs() < 1e-12);
    }

    #[test]
    fn torus_sine_closed_forms() {
        // I = a²π²/2, J = a²π²/4 up to the O(h²) stencil error
        let a = 0.05;
        let (b, phi) = torus_sine(256, a);
        let ay = aubin_ij(&phi, &b, PathQuadrature::default()).unwrap();
        let h = b.min_spacing();
        let i_exact = a * a * PI * PI / 2.0;
        assert!((ay.i - i_exact).abs() < i_exact * (PI * PI * h * h));
        assert!((ay.j - i_exact / 2.0).abs() < i_exact * (PI * PI * h * h));
        assert!((ay.i - 2.0 * ay.j).abs() < 1e-15);
        assert!((ay.i_minus_j - ay.i_minus_j_path).abs() < 1e-14);
    }

    #[test]
    fn j_hat_of_reference_is_i_minus_j() {
        let b = GeometryBackend::torus(2, 16).unwrap();
        let phi =
            "sine(0.02,1,0) + mixed(0.01,1,1) + cosine(0.01,2,1)".parse::<PotentialExpr>().unwrap().sample(&b).unwrap();
        let ay = aubin_ij(&phi, &b, PathQuadrature::default()).unwrap();
        let jh = j_hat(b.chi0(), &phi, &b).unwrap();
        assert!((jh - ay.i_minus_j_path).abs() < 1e-15);
        assert!((jh - ay.i_minus_j).abs() < 1e-6 * ay.i);
    }

    #[test]
    fn trivial_field_collapses_tilde() {
        let (b, phi) = torus_sine(64, 0.03);
        let omega = b.chi0().scaled(2.0);
        assert_eq!(j_hat(&omega, &phi, &b).unwrap(), j_tilde(&omega, &phi, &b).unwrap());
        let (mu, mu_t) = k_energy_modified(&phi, &b, PathQuadrature::default()).unwrap();
        assert_eq!(mu, mu_t);
        assert!((mu - entropy(&phi, &b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn entropy_matches_high_resolution_quadrature() {
        let a = 0.01;
        let (b, phi) = torus_sine(512, a);
        let got = entropy(&phi, &b).unwrap();
        // oracle: ∫ g log g with the exact density g = 1 − aπ² sin 2πx, fine midpoint rule
        let m = 200_000;
        let oracle: f64 = (0..m)
            .map(|k| {
                let x = (k as f64 + 0.5) / m as f64;
                let g = 1.0 - a * PI * PI * (2.0 * PI * x).sin();
                g * g.ln()
            })
            .sum::<f64>()
            / m as f64;
        assert!((got - oracle).abs() < 1e-3 * oracle, "{got} vs {oracle}");
        assert!(got >= -1e-8);
        assert!(entropy(&PotentialField::zeros(b.len()), &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn sigma_energy_reference_case() {
        let b = GeometryBackend::torus(2, 8).unwrap();
        let (sigma, e) = sigma_energy(&PotentialField::zeros(b.len()), b.chi0(), &b).unwrap();
        assert!(sigma.values.iter().all(|&s| (s + 2.0).abs() < 1e-15));
        assert!((e - 4.0 * b.volume()).abs() < 1e-12);
        let (b, phi) = torus_sine(64, 0.03);
        let omega = b.chi0().scaled(1.5);
        let (_, e1) = sigma_energy(&phi, &omega, &b).unwrap();
        let (_, e2) = sigma_energy(&phi.add_constant(4.0), &omega, &b).unwrap();
        assert!((e1 - e2).abs() < 1e-14);
    }

    #[test]
    fn report_serializes_with_exact_names() {
        let (b, phi) = torus_sine(32, 0.02);
        let report = evaluate_all(&phi, &b.chi0().scaled(2.0), &b, PathQuadrature::default()).unwrap();
        let v = serde_json::to_value(&report).unwrap();
        for key in ["c", "I", "J", "j_hat", "j_tilde", "entropy", "k_energy", "k_energy_modified", "E"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(report.richardson_delta < 1e-12);
    }
}
