//! Legendre duality on the sphere backend.
//!
//! An invariant potential `φ` gives the convex chart potential
//! `F(s) = log(1 + e^s) + φ(s)`; its Legendre dual `u(m) = sup_s (ms − F(s))`
//! lives on the moment interval `(0, 1)`. Mabuchi geodesics between
//! invariant potentials are straight lines `u_t = (1 − t)u_a + t u_b`.
//!
//! `u` is stored as `u0 + v`, where `u0 = m log m + (1 − m) log(1 − m)` is the
//! Fubini–Study dual and `v` is smooth up to the endpoints.

use serde::{Deserialize, Serialize};

use crate::error::{JflowError, Result};
use crate::functionals::{aubin_ij, entropy, k_energy_modified, sigma_energy, JFunctional, PathQuadrature};
use crate::geometry::{
    build_metric, fubini_study_potential, logistic, x_derivative, BackendKind, GeometryBackend, HermitianFormField,
    PotentialField,
};

pub const DEFAULT_MOMENT_POINTS: usize = 2049;

/// Extra chart length beyond the truncation that root finding may use.
const TAIL_ALLOWANCE: f64 = 2.0;
const STENCIL: usize = 6;

fn require_sphere(b: &GeometryBackend) -> Result<&[f64]> {
    b.moment().ok_or(JflowError::UnsupportedBackend("torus"))
}

/// Six-point Lagrange interpolation: value and first derivative at `x`.
fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> (f64, f64) {
    let k = STENCIL.min(xs.len());
    let pos = xs.partition_point(|&v| v < x);
    let start = pos.saturating_sub(k / 2).min(xs.len() - k);
    let (xs, ys) = (&xs[start..start + k], &ys[start..start + k]);
    let mut value = 0.0;
    let mut deriv = 0.0;
    for i in 0..k {
        let mut li = 1.0;
        let mut dli = 0.0;
        for j in 0..k {
            if j == i {
                continue;
            }
            let denom = xs[i] - xs[j];
            // product rule over the factors (x − x_j)/(x_i − x_j)
            dli = dli * (x - xs[j]) / denom + li / denom;
            li *= (x - xs[j]) / denom;
        }
        value += ys[i] * li;
        deriv += ys[i] * dli;
    }
    (value, deriv)
}

fn u0(m: f64) -> f64 {
    let a = if m > 0.0 { m * m.ln() } else { 0.0 };
    let b = if m < 1.0 { (1.0 - m) * (1.0 - m).ln() } else { 0.0 };
    a + b
}

/// Bisection for an increasing function on `[lo, hi]`; `None` if `target` is not bracketed.
fn bisect<F: Fn(f64) -> f64>(f: F, target: f64, mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    if !(f(lo) <= target && f(hi) >= target) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < tol {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Symplectic potential sampled on the cell centres `m_i = (i + 1/2)/M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymplecticPotential {
    pub m: Vec<f64>,
    pub values: Vec<f64>,
    /// `u − u0`.
    pub smooth_part: Vec<f64>,
    pub convex: bool,
}

impl SymplecticPotential {
    pub fn from_smooth_part(smooth_part: Vec<f64>) -> Self {
        let len = smooth_part.len();
        let m: Vec<f64> = (0..len).map(|i| (i as f64 + 0.5) / len as f64).collect();
        let values: Vec<f64> = m.iter().zip(&smooth_part).map(|(m, v)| u0(*m) + v).collect();
        let convex = values.windows(3).all(|w| w[0] - 2.0 * w[1] + w[2] >= 0.0);
        Self { m, values, smooth_part, convex }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// `(u(m), u′(m))` from the interpolated smooth part.
    pub fn eval(&self, m: f64) -> (f64, f64) {
        let (v, dv) = lagrange(&self.m, &self.smooth_part, m);
        (u0(m) + v, (m / (1.0 - m)).ln() + dv)
    }

    /// `(1 − t) self + t other`.
    pub fn lerp(&self, other: &Self, t: f64) -> Result<Self> {
        if self.len() != other.len() {
            return Err(JflowError::ShapeMismatch { expected: self.len(), got: other.len() });
        }
        Ok(Self::from_smooth_part(
            self.smooth_part.iter().zip(&other.smooth_part).map(|(a, b)| a + t * (b - a)).collect(),
        ))
    }
}

/// `u(m) = sup_s (ms − F(s))` with `F = log(1 + e^s) + φ`, on `points` moment cells.
pub fn legendre_transform(phi: &PotentialField, b: &GeometryBackend, points: usize) -> Result<SymplecticPotential> {
    let m0 = require_sphere(b)?;
    b.check_len(phi.len())?;
    if points < STENCIL {
        return Err(JflowError::Config(format!("moment grid needs at least {STENCIL} points")));
    }
    let chi = build_metric(phi, b)?;
    if !chi.is_kahler_metric() {
        let (index, v) = chi.min_eigenvalue().unwrap_or((0, f64::NAN));
        return Err(JflowError::ConvexityLost(format!("chart potential not convex at node {index} (g = {v:e})")));
    }
    let vals = phi.values();
    // F(s) and F'(s) with φ interpolated in the Fubini–Study moment
    let chart = |s: f64| {
        let mu = logistic(s);
        let (p, dp) = lagrange(m0, vals, mu);
        (fubini_study_potential(s) + p, mu + dp * mu * (1.0 - mu))
    };
    let bound = b.truncation().unwrap_or(0.0) + TAIL_ALLOWANCE;
    let mut smooth = Vec::with_capacity(points);
    for i in 0..points {
        let m = (i as f64 + 0.5) / points as f64;
        let s = bisect(|s| chart(s).1, m, -bound, bound, 1e-14).ok_or_else(|| {
            JflowError::ConvexityLost(format!("supremum for m = {m} lies beyond the chart truncation"))
        })?;
        let u = m * s - chart(s).0;
        smooth.push(u - u0(m));
    }
    let u = SymplecticPotential::from_smooth_part(smooth);
    if !u.convex {
        return Err(JflowError::ConvexityLost("symplectic potential is not convex".into()));
    }
    Ok(u)
}

/// `φ(s) = sup_m (ms − u(m)) − log(1 + e^s)` on the backend nodes.
pub fn inverse_legendre_transform(u: &SymplecticPotential, b: &GeometryBackend) -> Result<PotentialField> {
    require_sphere(b)?;
    if !u.convex {
        return Err(JflowError::ConvexityLost("symplectic potential is not convex".into()));
    }
    let s_nodes = b.coordinates(0);
    let mut out = Vec::with_capacity(s_nodes.len());
    for &s in s_nodes {
        // solve u'(m) = s in the logit variable y, m = logistic(y), to 1e-10 in m
        let y = bisect(|y| y + lagrange(&u.m, &u.smooth_part, logistic(y)).1, s, -60.0, 60.0, 1e-12)
            .ok_or_else(|| JflowError::ConvexityLost(format!("no dual point for s = {s}")))?;
        let m = logistic(y);
        let (value, _) = u.eval(m);
        out.push(m * s - value - fubini_study_potential(s));
    }
    PotentialField::new(out)
}

/// Samples of the Mabuchi geodesic from `φ_a` to `φ_b` at `steps + 1` uniform times.
pub fn geodesic_path(
    phi_a: &PotentialField,
    phi_b: &PotentialField,
    steps: usize,
    b: &GeometryBackend,
) -> Result<Vec<PotentialField>> {
    geodesic_path_with(phi_a, phi_b, steps, b, DEFAULT_MOMENT_POINTS)
}

pub fn geodesic_path_with(
    phi_a: &PotentialField,
    phi_b: &PotentialField,
    steps: usize,
    b: &GeometryBackend,
    moment_points: usize,
) -> Result<Vec<PotentialField>> {
    require_sphere(b)?;
    if steps == 0 {
        return Err(JflowError::Config("geodesic needs at least one step".into()));
    }
    let ua = legendre_transform(phi_a, b, moment_points)?;
    let ub = legendre_transform(phi_b, b, moment_points)?;
    (0..=steps).map(|k| inverse_legendre_transform(&ua.lerp(&ub, k as f64 / steps as f64)?, b)).collect()
}

/// `max |φ̈ − φ̇_s² / g|` over interior path nodes, by central differences in `t` and `s`.
pub fn geodesic_residual(path: &[PotentialField], b: &GeometryBackend) -> Result<f64> {
    require_sphere(b)?;
    if path.len() < 3 {
        return Err(JflowError::Config("geodesic residual needs at least three path nodes".into()));
    }
    let dt = 1.0 / (path.len() - 1) as f64;
    let mut worst = 0.0f64;
    for k in 1..path.len() - 1 {
        let (prev, cur, next) = (path[k - 1].values(), path[k].values(), path[k + 1].values());
        let velocity: Vec<f64> = next.iter().zip(prev).map(|(a, b)| (a - b) / (2.0 * dt)).collect();
        let dv = x_derivative(&velocity, b);
        let g = build_metric(&path[k], b)?;
        for p in 0..cur.len() {
            let accel = (next[p] - 2.0 * cur[p] + prev[p]) / (dt * dt);
            worst = worst.max((accel - dv[p] * dv[p] / g.packed()[p]).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalId {
    JTilde,
    JHat,
    AubinI,
    AubinJ,
    Entropy,
    KEnergy,
    KEnergyModified,
    Energy,
}

impl FunctionalId {
    pub fn name(self) -> &'static str {
        match self {
            Self::JTilde => "j_tilde",
            Self::JHat => "j_hat",
            Self::AubinI => "aubin_i",
            Self::AubinJ => "aubin_j",
            Self::Entropy => "entropy",
            Self::KEnergy => "k_energy",
            Self::KEnergyModified => "k_energy_modified",
            Self::Energy => "energy",
        }
    }
}

impl std::str::FromStr for FunctionalId {
    type Err = JflowError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "j_tilde" => Self::JTilde,
            "j_hat" => Self::JHat,
            "I" | "aubin_i" => Self::AubinI,
            "J" | "aubin_j" => Self::AubinJ,
            "entropy" => Self::Entropy,
            "k_energy" => Self::KEnergy,
            "k_energy_modified" => Self::KEnergyModified,
            "E" | "energy" => Self::Energy,
            _ => return Err(JflowError::Config(format!("unknown functional `{s}`"))),
        })
    }
}

/// Evaluates a functional at one potential.
pub fn evaluate_functional(
    id: FunctionalId,
    phi: &PotentialField,
    omega: &HermitianFormField,
    b: &GeometryBackend,
) -> Result<f64> {
    let quad = PathQuadrature::default();
    Ok(match id {
        FunctionalId::JTilde => JFunctional::new(omega.clone(), b, quad)?.j_tilde(phi)?,
        FunctionalId::JHat => JFunctional::new(omega.clone(), b, quad)?.j_hat(phi)?,
        FunctionalId::AubinI => aubin_ij(phi, b, quad)?.i,
        FunctionalId::AubinJ => aubin_ij(phi, b, quad)?.j,
        FunctionalId::Entropy => entropy(phi, b)?,
        FunctionalId::KEnergy => k_energy_modified(phi, b, quad)?.0,
        FunctionalId::KEnergyModified => k_energy_modified(phi, b, quad)?.1,
        FunctionalId::Energy => sigma_energy(phi, omega, b)?.1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// `f(t_{k+1}) − 2 f(t_k) + f(t_{k−1})`; `NaN` at the endpoints.
    pub second_differences: Vec<f64>,
    pub min_second_difference: f64,
    pub argmin_t: f64,
}

impl ProbeReport {
    /// Second differences of an arbitrary sequence sampled at uniform `t`.
    pub fn from_values(values: Vec<f64>) -> Self {
        let len = values.len();
        let t: Vec<f64> = (0..len).map(|k| k as f64 / (len.max(2) - 1) as f64).collect();
        let mut second_differences = vec![f64::NAN; len];
        let (mut min, mut argmin) = (f64::INFINITY, f64::NAN);
        for k in 1..len.saturating_sub(1) {
            let d = values[k + 1] - 2.0 * values[k] + values[k - 1];
            second_differences[k] = d;
            if d < min {
                min = d;
                argmin = t[k];
            }
        }
        Self { t, values, second_differences, min_second_difference: min, argmin_t: argmin }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value,second_difference\n");
        for k in 0..self.t.len() {
            out.push_str(&format!("{:e},{:e},{:e}\n", self.t[k], self.values[k], self.second_differences[k]));
        }
        out
    }
}

/// Second differences of a functional along a path.
pub fn convexity_probe(
    id: FunctionalId,
    path: &[PotentialField],
    omega: &HermitianFormField,
    b: &GeometryBackend,
) -> Result<ProbeReport> {
    if b.kind() == BackendKind::Torus && path.iter().any(|p| p.values().iter().any(|v| *v != p.values()[0])) {
        log::debug!("probing a non-geodesic torus path");
    }
    let values = path.iter().map(|phi| evaluate_functional(id, phi, omega, b)).collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport::from_values(values))
}
