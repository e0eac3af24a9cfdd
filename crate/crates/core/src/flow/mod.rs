//! Time integration of the modified J-flow
//! `∂φ/∂t = (1/n)(nc + θ_X(χ_φ) − Λ_{χ_φ}ω)` with runtime monitors.

mod tridiag;

pub use tridiag::{solve_cyclic, solve_tridiagonal};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::subsolution_margin;
use crate::error::{JflowError, Result};
use crate::functionals::{level_constant, min_relative_eigenvalue};
use crate::geometry::{
    build_metric, gradient_energy, linalg, ops::hessian_of_values, theta_of, x_derivative, BackendKind,
    GeometryBackend, HermitianFormField, PotentialField, ScalarField,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// RK4 on the torus, linearly implicit on the sphere.
    #[default]
    Auto,
    Rk4,
    Euler,
    /// `(I − dt·L)δ = dt·rhs` with the linearized operator `L` (one-dimensional grids).
    LinearlyImplicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub t_max: f64,
    pub residual_target: f64,
    pub cfl_safety: f64,
    pub dt_min: f64,
    /// Initial step; defaults to the CFL limit (explicit) or `1e-3` (implicit).
    pub dt_initial: Option<f64>,
    pub dt_max: Option<f64>,
    pub integrator: Integrator,
    pub e_tol_relative: f64,
    pub e_tol_absolute: f64,
    pub growth_factor: f64,
    pub growth_after: usize,
    pub max_steps: usize,
    /// Weight `A` of the diagnostic `max(log Λ_ω χ − Aφ)`.
    pub c2_diagnostic_a: Option<f64>,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            t_max: 50.0,
            residual_target: 1e-6,
            cfl_safety: 0.2,
            dt_min: 1e-12,
            dt_initial: None,
            dt_max: None,
            integrator: Integrator::Auto,
            e_tol_relative: 1e-9,
            e_tol_absolute: 1e-12,
            growth_factor: 1.2,
            growth_after: 10,
            max_steps: 2_000_000,
            c2_diagnostic_a: None,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(JflowError::Config(format!("flow parameter {what}")));
        if !(self.t_max >= 0.0) {
            return bad("t_max must be non-negative");
        }
        if !(self.residual_target > 0.0) {
            return bad("residual_target must be positive");
        }
        if !(self.cfl_safety > 0.0) {
            return bad("cfl_safety must be positive");
        }
        if !(self.dt_min > 0.0) {
            return bad("dt_min must be positive");
        }
        if !(self.growth_factor >= 1.0) {
            return bad("growth_factor must be >= 1");
        }
        if self.dt_initial.is_some_and(|d| !(d > 0.0)) || self.dt_max.is_some_and(|d| !(d > 0.0)) {
            return bad("dt_initial and dt_max must be positive");
        }
        Ok(())
    }
}

/// Reference data of one flow: backend, `ω` and the level constant.
#[derive(Clone, Debug)]
pub struct FlowProblem<'a> {
    pub backend: &'a GeometryBackend,
    pub omega: HermitianFormField,
    pub c: f64,
}

impl<'a> FlowProblem<'a> {
    /// `c` defaults to the level constant of `ω`.
    pub fn new(backend: &'a GeometryBackend, omega: HermitianFormField, c: Option<f64>) -> Result<Self> {
        backend.check_len(omega.len())?;
        let c = match c {
            Some(c) => c,
            None => level_constant(&omega, backend)?,
        };
        Ok(Self { backend, omega, c })
    }

    fn resolve(&self, integrator: Integrator) -> Integrator {
        match (integrator, self.backend.kind()) {
            (Integrator::Auto, BackendKind::Torus) => Integrator::Rk4,
            (Integrator::Auto, BackendKind::Sphere) => Integrator::LinearlyImplicit,
            (i, _) => i,
        }
    }
}

/// Grids below this size are evaluated sequentially.
const PARALLEL_THRESHOLD: usize = 4096;

fn map_points<T: Send, F: Fn(usize) -> T + Sync + Send>(len: usize, f: F) -> Vec<T> {
    if len >= PARALLEL_THRESHOLD {
        (0..len).into_par_iter().map(f).collect()
    } else {
        (0..len).map(f).collect()
    }
}

fn pointwise_trace(chi: &HermitianFormField, omega: &HermitianFormField) -> Vec<f64> {
    let n = chi.dim();
    map_points(chi.len(), |p| linalg::relative_trace(n, chi.at(p), omega.at(p)))
}

/// `(1/n)(nc + θ_X(χ_φ) − Λ_{χ_φ}ω)`.
pub fn flow_rhs(phi: &PotentialField, omega: &HermitianFormField, c: f64, b: &GeometryBackend) -> Result<ScalarField> {
    let chi = build_metric(phi, b)?;
    chi.require_kahler(b.positivity_floor())?;
    b.check_len(omega.len())?;
    let theta = theta_of(phi, b)?;
    Ok(rhs_from(&chi, omega, &theta, c))
}

fn rhs_from(chi: &HermitianFormField, omega: &HermitianFormField, theta: &ScalarField, c: f64) -> ScalarField {
    let n = chi.dim() as f64;
    let lambda = pointwise_trace(chi, omega);
    ScalarField::new(lambda.iter().zip(&theta.values).map(|(l, t)| (n * c + t - l) / n).collect())
}

/// `L ψ = (1/n)(h^{kl̄} ∂_k∂_l̄ ψ + X ψ)` with `h = χ⁻¹ ω χ⁻¹`.
#[derive(Clone, Debug)]
pub struct LinearizedOperator<'a> {
    backend: &'a GeometryBackend,
    /// The tensor `h^{kl̄}` per point.
    pub h: HermitianFormField,
}

impl<'a> LinearizedOperator<'a> {
    pub fn new(phi: &PotentialField, omega: &HermitianFormField, b: &'a GeometryBackend) -> Result<Self> {
        let chi = build_metric(phi, b)?;
        chi.require_kahler(b.positivity_floor())?;
        Ok(Self::from_metric(&chi, omega, b))
    }

    fn from_metric(chi: &HermitianFormField, omega: &HermitianFormField, b: &'a GeometryBackend) -> Self {
        let n = chi.dim();
        let data: Vec<f64> = if n == 1 {
            chi.packed().iter().zip(omega.packed()).map(|(c, w)| w / (c * c)).collect()
        } else {
            map_points(chi.len(), |p| linalg::sandwich_inverse(n, chi.at(p), omega.at(p))).concat()
        };
        Self { backend: b, h: HermitianFormField::from_packed(n, data) }
    }

    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        let b = self.backend;
        let n = b.dim();
        let hess = hessian_of_values(psi, b);
        let x = x_derivative(psi, b);
        (0..psi.len())
            .map(|p| {
                let (h, d) = (self.h.at(p), hess.at(p));
                let mut s = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let k = linalg::packed_index(n, i, j);
                        s += h[k] * d[k];
                    }
                }
                (s + x[p]) / n as f64
            })
            .collect()
    }

    /// Largest diffusion coefficient, in units where the stencil is `d²/dx²`.
    pub fn max_coefficient(&self) -> f64 {
        let n = self.h.dim();
        let scale = match self.backend.kind() {
            BackendKind::Torus => 0.25,
            BackendKind::Sphere => 1.0,
        };
        (0..self.h.len()).map(|p| linalg::trace(n, self.h.at(p))).fold(0.0, f64::max) * scale / n as f64
    }

    /// Tridiagonal (torus: cyclic) coefficients of `L` on a one-dimensional grid.
    pub fn tridiagonal(&self) -> Option<[Vec<f64>; 3]> {
        let b = self.backend;
        if b.dim() != 1 {
            return None;
        }
        let len = b.len();
        let (mut lo, mut di, mut up) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        match b.kind() {
            BackendKind::Torus => {
                let h2 = b.spacing()[0].powi(2);
                for j in 0..len {
                    let k = 0.25 * self.h.at(j)[0] / h2;
                    lo[j] = k;
                    up[j] = k;
                    di[j] = -2.0 * k;
                }
            }
            BackendKind::Sphere => {
                let chart = b.sphere.as_ref().expect("sphere chart");
                let ds = chart.ds;
                for j in 0..len {
                    let k = self.h.at(j)[0] / (ds * chart.cell[j]);
                    let x = 0.5 / ds;
                    if j > 0 {
                        lo[j] = k - x;
                        di[j] += -k + x;
                    }
                    if j + 1 < len {
                        up[j] = k + x;
                        di[j] += -k - x;
                    }
                }
            }
        }
        Some([lo, di, up])
    }
}

/// Derived quantities of one potential.
#[derive(Clone, Debug)]
struct Snapshot {
    chi: HermitianFormField,
    theta: ScalarField,
    lambda: Vec<f64>,
    rhs: ScalarField,
    energy: f64,
}

impl Snapshot {
    fn of(problem: &FlowProblem, phi: &PotentialField) -> Result<Self> {
        let b = problem.backend;
        let chi = build_metric(phi, b)?;
        chi.require_kahler(b.positivity_floor())?;
        let theta = theta_of(phi, b)?;
        let lambda = pointwise_trace(&chi, &problem.omega);
        let n = b.dim() as f64;
        let rhs =
            ScalarField::new(lambda.iter().zip(&theta.values).map(|(l, t)| (n * problem.c + t - l) / n).collect());
        let det = chi.determinants();
        let energy = (0..phi.len())
            .map(|p| {
                let s = theta.values[p] - lambda[p];
                s * s * det[p] * b.weights()[p]
            })
            .sum();
        Ok(Self { chi, theta, lambda, rhs, energy })
    }

    fn residual(&self) -> f64 {
        self.backend_n() * self.rhs.sup_norm()
    }

    fn backend_n(&self) -> f64 {
        self.chi.dim() as f64
    }

    /// `−(2/n) ∫ |∇σ|²_ω`, the predicted `dE/dt`.
    fn predicted_dissipation(&self, problem: &FlowProblem) -> f64 {
        let b = problem.backend;
        let op = LinearizedOperator::from_metric(&self.chi, &problem.omega, b);
        let det = self.chi.determinants();
        let k = linalg::packed_len(self.chi.dim());
        let tensor: Vec<f64> = op.h.packed().iter().enumerate().map(|(i, v)| v * det[i / k]).collect();
        let sigma: Vec<f64> = self.theta.values.iter().zip(&self.lambda).map(|(t, l)| t - l).collect();
        -2.0 / self.backend_n() * gradient_energy(&sigma, &HermitianFormField::from_packed(self.chi.dim(), tensor), b)
    }
}

/// One row of the trajectory ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "dE_dt_measured")]
    pub de_dt_measured: f64,
    #[serde(rename = "dE_dt_predicted")]
    pub de_dt_predicted: f64,
    pub rhs_min: f64,
    pub rhs_max: f64,
    pub lambda_max: f64,
    pub floor_constant: f64,
    pub residual: f64,
    pub suspect: bool,
    /// `max |X(θ_X(χ_φ)) − |X|²_{χ_φ}|`.
    pub imx_drift: f64,
    pub c2_diagnostic: Option<f64>,
}

impl TrajectoryRow {
    pub const CSV_HEADER: &'static str =
        "t,dt,E,dE_dt_measured,dE_dt_predicted,rhs_min,rhs_max,lambda_max,floor_constant,residual,suspect";

    pub fn csv_line(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.t,
            self.dt,
            self.e,
            self.de_dt_measured,
            self.de_dt_predicted,
            self.rhs_min,
            self.rhs_max,
            self.lambda_max,
            self.floor_constant,
            self.residual,
            self.suspect
        )
    }
}

#[derive(Clone, Debug)]
pub struct FlowState {
    pub phi: PotentialField,
    pub t: f64,
    pub dt: f64,
    pub step_count: usize,
    pub rejected_count: usize,
    /// `(min, max)` of `∂φ/∂t` at `t = 0`.
    pub rhs_range_initial: (f64, f64),
    pub lambda_max_initial: f64,
    pub monitors: Vec<TrajectoryRow>,
    accepted_streak: usize,
    snapshot: Snapshot,
    predicted: f64,
}

impl FlowState {
    pub fn new(problem: &FlowProblem, phi: PotentialField, params: &FlowParams) -> Result<Self> {
        params.validate()?;
        problem.backend.check_len(phi.len())?;
        let integrator = problem.resolve(params.integrator);
        if integrator == Integrator::LinearlyImplicit && problem.backend.dim() != 1 {
            return Err(JflowError::Config("linearly implicit stepping needs a one-dimensional grid".into()));
        }
        let snapshot = Snapshot::of(problem, &phi)?;
        let predicted = snapshot.predicted_dissipation(problem);
        let lambda_max_initial = snapshot.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dt = match (params.dt_initial, integrator) {
            (Some(dt), _) => dt,
            (None, Integrator::LinearlyImplicit) => 1e-3,
            (None, _) => cfl_limit(problem, &snapshot, params),
        };
        let dt = params.dt_max.map_or(dt, |m| dt.min(m));
        let mut state = Self {
            rhs_range_initial: (snapshot.rhs.min(), snapshot.rhs.max()),
            lambda_max_initial,
            phi,
            t: 0.0,
            dt,
            step_count: 0,
            rejected_count: 0,
            monitors: Vec::new(),
            accepted_streak: 0,
            snapshot,
            predicted,
        };
        let row = state.row(problem, params, f64::NAN, predicted, f64::NAN);
        state.monitors.push(row);
        Ok(state)
    }

    pub fn energy(&self) -> f64 {
        self.snapshot.energy
    }

    pub fn residual(&self) -> f64 {
        self.snapshot.residual()
    }

    pub fn metric(&self) -> &HermitianFormField {
        &self.snapshot.chi
    }

    pub fn rhs(&self) -> &ScalarField {
        &self.snapshot.rhs
    }

    fn row(&self, problem: &FlowProblem, params: &FlowParams, dt: f64, predicted: f64, measured: f64) -> TrajectoryRow {
        let b = problem.backend;
        let snap = &self.snapshot;
        let h = b.min_spacing();
        let tol = 1e-6 + 10.0 * h * h;
        let lambda_max = snap.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor_constant = min_relative_eigenvalue(&snap.chi, &problem.omega);
        let (rmin, rmax) = (snap.rhs.min(), snap.rhs.max());
        let theta_osc = snap.theta.max() - b.theta0().min();
        let imx_drift = match b.kind() {
            BackendKind::Torus => 0.0,
            BackendKind::Sphere => x_derivative(&snap.theta.values, b)
                .iter()
                .zip(snap.chi.packed())
                .fold(0.0, |m, (x, g)| f64::max(m, (x - g).abs())),
        };
        let mut suspect = rmin < self.rhs_range_initial.0 - tol || rmax > self.rhs_range_initial.1 + tol;
        suspect |= lambda_max > self.lambda_max_initial + theta_osc.max(0.0) + tol;
        suspect |= floor_constant.is_finite() && floor_constant < 1.0 / lambda_max - tol;
        if let Some(prev) = self.monitors.last() {
            suspect |= snap.energy > prev.e + params.e_tol_relative * prev.e.abs() + params.e_tol_absolute;
        }
        let c2_diagnostic = params.c2_diagnostic_a.map(|a| {
            let n = b.dim();
            (0..snap.chi.len())
                .map(|p| linalg::relative_trace(n, problem.omega.at(p), snap.chi.at(p)).ln() - a * self.phi.values()[p])
                .fold(f64::NEG_INFINITY, f64::max)
        });
        if suspect {
            debug!("monitor tolerance exceeded at t = {}", self.t);
        }
        TrajectoryRow {
            step: self.step_count,
            t: self.t,
            dt,
            e: snap.energy,
            de_dt_measured: measured,
            de_dt_predicted: predicted,
            rhs_min: rmin,
            rhs_max: rmax,
            lambda_max,
            floor_constant,
            residual: snap.residual(),
            suspect,
            imx_drift,
            c2_diagnostic,
        }
    }
}

fn cfl_limit(problem: &FlowProblem, snap: &Snapshot, params: &FlowParams) -> f64 {
    let op = LinearizedOperator::from_metric(&snap.chi, &problem.omega, problem.backend);
    let h = problem.backend.min_spacing();
    let k = op.max_coefficient() * problem.backend.dim() as f64;
    if k > 0.0 {
        params.cfl_safety * h * h / k
    } else {
        f64::INFINITY
    }
}

fn rhs_at(problem: &FlowProblem, phi: &PotentialField) -> Result<Vec<f64>> {
    Ok(flow_rhs(phi, &problem.omega, problem.c, problem.backend)?.values)
}

fn propose(problem: &FlowProblem, state: &FlowState, dt: f64, integrator: Integrator) -> Result<PotentialField> {
    let phi = &state.phi;
    let k1 = &state.snapshot.rhs.values;
    let add = |base: &PotentialField, k: &[f64], s: f64| {
        PotentialField::new(base.values().iter().zip(k).map(|(v, k)| v + s * k).collect())
    };
    match integrator {
        Integrator::Euler => add(phi, k1, dt),
        Integrator::Rk4 | Integrator::Auto => {
            let k2 = rhs_at(problem, &add(phi, k1, 0.5 * dt)?)?;
            let k3 = rhs_at(problem, &add(phi, &k2, 0.5 * dt)?)?;
            let k4 = rhs_at(problem, &add(phi, &k3, dt)?)?;
            let incr: Vec<f64> = (0..phi.len()).map(|p| (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]) / 6.0).collect();
            add(phi, &incr, dt)
        }
        Integrator::LinearlyImplicit => {
            let op = LinearizedOperator::from_metric(&state.snapshot.chi, &problem.omega, problem.backend);
            let [lo, di, up] = op.tridiagonal().expect("one-dimensional grid");
            let lo: Vec<f64> = lo.iter().map(|v| -dt * v).collect();
            let up: Vec<f64> = up.iter().map(|v| -dt * v).collect();
            let di: Vec<f64> = di.iter().map(|v| 1.0 - dt * v).collect();
            let rhs: Vec<f64> = k1.iter().map(|v| dt * v).collect();
            let delta = match problem.backend.kind() {
                BackendKind::Torus => solve_cyclic(&lo, &di, &up, &rhs),
                BackendKind::Sphere => solve_tridiagonal(&lo, &di, &up, &rhs),
            }
            .ok_or_else(|| JflowError::Config("singular implicit system".into()))?;
            add(phi, &delta, 1.0)
        }
    }
}

/// `E(new) − E(old)` summed pointwise from the increment `δ = φ_new − φ_old`,
/// using `Δχ = Hess δ`, `ΔΛ = −tr(χ_new⁻¹ Δχ χ_old⁻¹ ω)` and
/// `Δdet = det χ_old (∏(1 + λ_i) − 1)` with `λ` the eigenvalues of `Δχ`
/// relative to `χ_old`. Free of the cancellation in `E(new) − E(old)`.
fn energy_increment(
    problem: &FlowProblem,
    old: &Snapshot,
    new: &Snapshot,
    phi_new: &PotentialField,
    phi_old: &PotentialField,
) -> f64 {
    let b = problem.backend;
    let n = b.dim();
    let delta: Vec<f64> = phi_new.values().iter().zip(phi_old.values()).map(|(a, b)| a - b).collect();
    let dchi = hessian_of_values(&delta, b);
    let dtheta = x_derivative(&delta, b);
    let det_old = old.chi.determinants();
    let det_new = new.chi.determinants();
    (0..delta.len())
        .map(|p| {
            let (c0, c1, d, w) = (old.chi.at(p), new.chi.at(p), dchi.at(p), problem.omega.at(p));
            let (dlambda, ddet) = if n == 1 {
                (-d[0] * w[0] / (c0[0] * c1[0]), d[0])
            } else {
                let (i0, i1) = (
                    linalg::to_dense(n, &linalg::inverse(n, c0).expect("Kähler")),
                    linalg::to_dense(n, &linalg::inverse(n, c1).expect("Kähler")),
                );
                let m = &i1 * linalg::to_dense(n, d) * &i0 * linalg::to_dense(n, w);
                let rel = linalg::generalized_eigenvalues(n, d, c0).expect("Kähler");
                let growth = rel.iter().fold(0.0, |acc, l| acc + l + acc * l);
                (-m.trace(), det_old[p] * growth)
            };
            let sigma = old.theta.values[p] - old.lambda[p];
            let dsigma = dtheta[p] - dlambda;
            (dsigma * (2.0 * sigma + dsigma) * det_new[p] + sigma * sigma * ddet) * b.weights()[p]
        })
        .sum()
}

/// Advances one accepted step, halving `dt` on rejection.
pub fn step(problem: &FlowProblem, state: &mut FlowState, params: &FlowParams) -> Result<()> {
    let integrator = problem.resolve(params.integrator);
    let limit = match integrator {
        Integrator::LinearlyImplicit => f64::INFINITY,
        _ => cfl_limit(problem, &state.snapshot, params),
    };
    let mut proposal = params.dt_max.map_or(state.dt, |m| state.dt.min(m));
    loop {
        let dt = proposal.min(limit);
        if dt < params.dt_min {
            state.dt = dt;
            return Err(JflowError::StepStalled { t: state.t, dt });
        }
        let candidate = propose(problem, state, dt, integrator).and_then(|phi| {
            let snap = Snapshot::of(problem, &phi)?;
            Ok((phi, snap))
        });
        let e_old = state.snapshot.energy;
        match candidate {
            Ok((phi, snap)) if snap.energy <= e_old + params.e_tol_relative * e_old.abs() + params.e_tol_absolute => {
                let measured = energy_increment(problem, &state.snapshot, &snap, &phi, &state.phi) / dt;
                let predicted_new = snap.predicted_dissipation(problem);
                let predicted = 0.5 * (state.predicted + predicted_new);
                state.phi = phi;
                state.snapshot = snap;
                state.predicted = predicted_new;
                state.t += dt;
                state.step_count += 1;
                state.accepted_streak += 1;
                state.dt = proposal;
                if state.accepted_streak >= params.growth_after {
                    state.accepted_streak = 0;
                    state.dt = proposal * params.growth_factor;
                    if let Some(m) = params.dt_max {
                        state.dt = state.dt.min(m);
                    }
                }
                let row = state.row(problem, params, dt, predicted, measured);
                state.monitors.push(row);
                return Ok(());
            }
            Ok(_) => debug!("step rejected at t = {}: energy increase (dt = {dt:e})", state.t),
            Err(e) => debug!("step rejected at t = {}: {e} (dt = {dt:e})", state.t),
        }
        state.rejected_count += 1;
        state.accepted_streak = 0;
        proposal = dt * 0.5;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FlowStatus {
    Converged,
    NonConvergence,
    StepStalled { t: f64, dt: f64 },
}

impl FlowStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::NonConvergence => "non-convergence",
            Self::StepStalled { .. } => "step-stalled",
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowRun {
    pub status: FlowStatus,
    pub c: f64,
    pub subsolution_margin: f64,
    pub final_phi: PotentialField,
    pub final_phi_normalized: PotentialField,
    pub final_metric: HermitianFormField,
    pub trajectory: Vec<TrajectoryRow>,
    pub rejected_steps: usize,
}

impl FlowRun {
    pub fn converged(&self) -> bool {
        self.status == FlowStatus::Converged
    }

    pub fn final_row(&self) -> &TrajectoryRow {
        self.trajectory.last().expect("initial row")
    }

    pub fn suspect(&self) -> bool {
        self.trajectory.iter().any(|r| r.suspect)
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from(TrajectoryRow::CSV_HEADER);
        out.push('\n');
        for row in &self.trajectory {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Integrates until the critical-equation residual drops below target or `t_max` is reached.
pub fn run_flow(problem: &FlowProblem, phi0: PotentialField, params: &FlowParams) -> Result<FlowRun> {
    let b = problem.backend;
    let margin = subsolution_margin(b.chi0(), &problem.omega, problem.c, b.theta0()).unwrap_or(f64::NAN);
    info!("flow on {} backend: c = {}, subsolution margin = {margin}", b.kind().name(), problem.c);
    let mut state = FlowState::new(problem, phi0, params)?;
    let status = loop {
        if state.residual() < params.residual_target {
            break FlowStatus::Converged;
        }
        if state.t >= params.t_max || state.step_count >= params.max_steps {
            break FlowStatus::NonConvergence;
        }
        match step(problem, &mut state, params) {
            Ok(()) => {}
            Err(JflowError::StepStalled { t, dt }) => {
                warn!("step stalled at t = {t} with dt = {dt:e}");
                break FlowStatus::StepStalled { t, dt };
            }
            Err(e) => return Err(e),
        }
    };
    info!(
        "flow finished: {status:?} at t = {} after {} steps, residual {:e}",
        state.t,
        state.step_count,
        state.residual()
    );
    Ok(FlowRun {
        status,
        c: problem.c,
        subsolution_margin: margin,
        final_phi_normalized: state.phi.renormalized(&b.reference_measure()),
        final_metric: state.snapshot.chi.clone(),
        final_phi: state.phi,
        trajectory: state.monitors,
        rejected_steps: state.rejected_count,
    })
}

/// The critical metric on the sphere for `ω = χ0`, `c = 1`:
/// `g = g0 / (u + 1/2)` with `u = √(2m + 1/4) − 1/2`.
pub fn sphere_reference_critical_density(b: &GeometryBackend) -> Result<Vec<f64>> {
    let m = b.moment().ok_or(JflowError::UnsupportedBackend("torus"))?;
    Ok(m.iter().zip(&b.chi0().packed().to_vec()).map(|(m, g0)| g0 / (2.0 * m + 0.25).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::potentials::PotentialExpr;

    fn sample(expr: &str, b: &GeometryBackend) -> PotentialField {
        expr.parse::<PotentialExpr>().unwrap().sample(b).unwrap()
    }

    #[test]
    fn stationary_torus_rhs_vanishes() {
        let b = GeometryBackend::torus(1, 32).unwrap();
        let rhs = flow_rhs(&PotentialField::zeros(b.len()), &b.chi0().scaled(2.0), 2.0, &b).unwrap();
        assert!(rhs.sup_norm() < 1e-15);
    }

    #[test]
    fn sphere_rhs_is_theta() {
        let b = GeometryBackend::sphere(129, 12.0).unwrap();
        let rhs = flow_rhs(&PotentialField::zeros(b.len()), b.chi0(), 1.0, &b).unwrap();
        for (r, t) in rhs.values.iter().zip(&b.theta0().values) {
            assert!((r - t).abs() < 1e-14);
        }
        assert!(rhs.min() > -0.5 && rhs.max() < 0.5);
    }

    #[test]
    fn linearization_matches_finite_differences() {
        for b in [GeometryBackend::torus(2, 16).unwrap(), GeometryBackend::sphere(129, 10.0).unwrap()] {
            let (phi, psi) = match b.kind() {
                BackendKind::Torus => (sample("sine(0.02,1,0) + mixed(0.01,1,1)", &b), sample("cosine(0.1,2,1)", &b)),
                BackendKind::Sphere => (sample("moment_cos(0.3,1)", &b), sample("moment_cos(0.2,2)", &b)),
            };
            let omega = b.chi0().scaled(1.3);
            let op = LinearizedOperator::new(&phi, &omega, &b).unwrap();
            let lin = op.apply(psi.values());
            let eps = 1e-4;
            let plus = flow_rhs(&phi.axpy(eps, &psi), &omega, 1.3, &b).unwrap();
            let minus = flow_rhs(&phi.axpy(-eps, &psi), &omega, 1.3, &b).unwrap();
            let scale = lin.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (p, l) in lin.iter().enumerate() {
                let fd = (plus.values[p] - minus.values[p]) / (2.0 * eps);
                assert!((fd - l).abs() < 1e-5 * scale.max(1.0), "{:?} {p}: {fd} vs {l}", b.kind());
            }
            let ones = op.apply(&vec![3.0; b.len()]);
            assert!(ones.iter().all(|v| v.abs() < 1e-12));
            if let Some([lo, di, up]) = op.tridiagonal() {
                let v = psi.values();
                let len = v.len();
                for j in 0..len {
                    let mut s = di[j] * v[j];
                    s += if j > 0 { lo[j] * v[j - 1] } else { 0.0 };
                    s += if j + 1 < len { up[j] * v[j + 1] } else { 0.0 };
                    assert!((s - lin[j]).abs() < 1e-9 * scale.max(1.0));
                }
            }
        }
    }

    #[test]
    fn stationary_state_keeps_still_and_grows_dt() {
        let b = GeometryBackend::torus(1, 32).unwrap();
        let problem = FlowProblem::new(&b, b.chi0().scaled(2.0), None).unwrap();
        let params = FlowParams { residual_target: 1e-300, t_max: 1e9, ..FlowParams::default() };
        let mut state = FlowState::new(&problem, PotentialField::zeros(b.len()), &params).unwrap();
        let dt0 = state.dt;
        for _ in 0..12 {
            step(&problem, &mut state, &params).unwrap();
        }
        assert!(state.phi.values().iter().all(|v| v.abs() < 1e-14));
        assert!(state.dt > dt0);
    }

    #[test]
    fn huge_dt_is_rejected() {
        let b = GeometryBackend::torus(1, 32).unwrap();
        let omega = HermitianFormField::from_density(
            (0..b.len()).map(|p| 2.0 * (1.0 + 0.3 * (2.0 * std::f64::consts::PI * b.point(p)[0]).sin())).collect(),
        );
        let problem = FlowProblem::new(&b, omega, None).unwrap();
        let params = FlowParams {
            integrator: Integrator::Euler,
            cfl_safety: 1e6,
            dt_initial: Some(10.0),
            ..FlowParams::default()
        };
        let mut state = FlowState::new(&problem, PotentialField::zeros(b.len()), &params).unwrap();
        step(&problem, &mut state, &params).unwrap();
        assert!(state.rejected_count > 0);
        assert!(state.dt < 10.0);
    }

    #[test]
    fn stall_reported() {
        let b = GeometryBackend::torus(1, 16).unwrap();
        let omega = b.chi0().scaled(2.0);
        let problem = FlowProblem::new(&b, omega, Some(3.0)).unwrap();
        let phi = sample("sine(0.05,1)", &b);
        let params = FlowParams { dt_min: 1.0, dt_initial: Some(0.5), ..FlowParams::default() };
        let run = run_flow(&problem, phi, &params).unwrap();
        assert!(matches!(run.status, FlowStatus::StepStalled { .. }));
    }

    #[test]
    fn csv_header_matches_row() {
        let b = GeometryBackend::torus(1, 16).unwrap();
        let problem = FlowProblem::new(&b, b.chi0().scaled(2.0), None).unwrap();
        let run = run_flow(&problem, PotentialField::zeros(b.len()), &FlowParams::default()).unwrap();
        assert!(run.converged());
        assert_eq!(run.final_row().residual, 0.0);
        let csv = run.trajectory_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap().split(',').count(), lines.next().unwrap().split(',').count());
    }
}
