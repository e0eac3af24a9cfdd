//! Scenario pipelines behind the command-line subcommands.

use log::{info, warn};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::cone::{properness_hypotheses, HypothesisReport};
use crate::config::{PlotFormat, ScenarioConfig};
use crate::error::{JflowError, Result};
use crate::flow::{run_flow, FlowProblem, FlowRun, FlowStatus};
use crate::functionals::{evaluate_all, FunctionalReport};
use crate::geodesic::{convexity_probe, geodesic_path_with, geodesic_residual, ProbeReport};
use crate::geometry::{BackendKind, GeometryBackend, HermitianFormField, PotentialField};
use crate::report::{to_json, write_file, FinalState, LinePlot, Series};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Functionals,
    CheckCone,
    GeodesicProbe,
    /// Every pipeline; the geodesic probe only on the sphere.
    Report,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STALLED: i32 = 3;
pub const EXIT_NON_CONVERGENCE: i32 = 4;

/// Mabuchi geodesic probe between two potential expressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeodesicProbeReport {
    pub start: String,
    pub end: String,
    pub steps: usize,
    pub moment_points: usize,
    pub geodesic_residual: f64,
    pub probes: BTreeMap<String, ProbeReport>,
}

#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub flow_status: Option<FlowStatus>,
    pub require_convergence: bool,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.flow_status {
            Some(FlowStatus::StepStalled { .. }) => EXIT_STALLED,
            Some(FlowStatus::NonConvergence) if self.require_convergence => EXIT_NON_CONVERGENCE,
            _ => EXIT_OK,
        }
    }
}

pub fn exit_code_for_error(e: &JflowError) -> i32 {
    match e {
        JflowError::Config(_)
        | JflowError::ShapeMismatch { .. }
        | JflowError::UnsupportedBackend(_)
        | JflowError::NotKahler { .. } => EXIT_CONFIG,
        JflowError::StepStalled { .. } => EXIT_STALLED,
        _ => EXIT_FAILURE,
    }
}

struct Context<'a> {
    config: &'a ScenarioConfig,
    backend: GeometryBackend,
    omega: HermitianFormField,
    dir: PathBuf,
    outcome: Outcome,
}

impl Context<'_> {
    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        write_file(&path, contents)?;
        info!("wrote {}", path.display());
        self.outcome.files.push(path);
        Ok(())
    }

    fn plots(&self) -> bool {
        self.config.outputs.plot == PlotFormat::Svg
    }

    fn initial(&self) -> Result<PotentialField> {
        let phi = self.config.initial_potential(&self.backend)?;
        let chi = crate::geometry::build_metric(&phi, &self.backend)?;
        chi.require_kahler(self.backend.positivity_floor())?;
        Ok(phi)
    }

    fn simulate(&mut self) -> Result<FlowRun> {
        let problem = FlowProblem::new(&self.backend, self.omega.clone(), self.config.c)?;
        let run = run_flow(&problem, self.initial()?, &self.config.flow)?;
        if run.suspect() {
            warn!("trajectory contains suspect rows");
        }
        let outputs = &self.config.outputs;
        let (csv_name, state_name) = (outputs.trajectory_csv.clone(), outputs.final_state_json.clone());
        self.write(&csv_name, &run.trajectory_csv())?;
        self.write(&state_name, &to_json(&FinalState::new(&run, &self.backend))?)?;
        if self.plots() {
            let series = |name: &str, f: fn(&crate::flow::TrajectoryRow) -> f64| Series {
                name: name.into(),
                points: run.trajectory.iter().map(|r| (r.t, f(r))).collect(),
            };
            let energy = LinePlot {
                title: "Energy".into(),
                x_label: "t".into(),
                y_label: "E".into(),
                log_y: false,
                series: vec![series("E", |r| r.e)],
            };
            let residual = LinePlot {
                title: "Residual".into(),
                x_label: "t".into(),
                y_label: "residual".into(),
                log_y: true,
                series: vec![series("residual", |r| r.residual)],
            };
            self.write("energy.svg", &energy.to_svg())?;
            self.write("residual.svg", &residual.to_svg())?;
        }
        self.outcome.flow_status = Some(run.status);
        Ok(run)
    }

    fn functionals(&mut self, phi: &PotentialField, name: &str) -> Result<FunctionalReport> {
        let report = evaluate_all(phi, &self.omega, &self.backend, self.config.quadrature()?)?;
        if self.config.functionals.report {
            self.write(name, &to_json(&report)?)?;
        }
        Ok(report)
    }

    fn check_cone(&mut self) -> Result<HypothesisReport> {
        let spec = &self.config.hypotheses;
        let psi = self.config.subsolution_potential(&self.backend)?;
        let omega_rep = spec.use_reference_form.then_some(&self.omega);
        let report =
            properness_hypotheses(&self.backend, omega_rep, psi.as_ref(), spec.epsilon, spec.alpha_lower_bound)?;
        for (name, margin) in &report.condition_margins {
            info!("{name}: margin {margin:e} ({:?})", report.classification[name]);
        }
        let name = self.config.outputs.hypotheses_json.clone();
        self.write(&name, &to_json(&report)?)?;
        Ok(report)
    }

    fn geodesic_probe(&mut self) -> Result<GeodesicProbeReport> {
        let spec = &self.config.geodesic;
        let b = &self.backend;
        if b.kind() != BackendKind::Sphere {
            return Err(JflowError::UnsupportedBackend("torus"));
        }
        let (start, end) = self.config.geodesic_endpoints(b)?;
        let path = geodesic_path_with(&start.sample(b)?, &end.sample(b)?, spec.steps, b, spec.moment_points)?;
        let residual = geodesic_residual(&path, b)?;
        let mut probes = BTreeMap::new();
        for id in &spec.functionals {
            let probe = convexity_probe(*id, &path, &self.omega, b)?;
            info!("{}: min second difference {:e} at t = {}", id.name(), probe.min_second_difference, probe.argmin_t);
            probes.insert(id.name().to_string(), probe);
        }
        let report = GeodesicProbeReport {
            start: start.to_string(),
            end: end.to_string(),
            steps: spec.steps,
            moment_points: spec.moment_points,
            geodesic_residual: residual,
            probes,
        };
        let outputs = &self.config.outputs;
        let (csv_name, json_name) = (outputs.probe_csv.clone(), outputs.probe_json.clone());
        for (name, probe) in &report.probes {
            let file = if report.probes.len() == 1 { csv_name.clone() } else { suffixed(&csv_name, name) };
            self.write(&file, &probe.to_csv())?;
        }
        self.write(&json_name, &to_json(&report)?)?;
        if self.plots() {
            let plot = LinePlot {
                title: "Functionals along the geodesic".into(),
                x_label: "t".into(),
                y_label: "value".into(),
                log_y: false,
                series: report
                    .probes
                    .iter()
                    .map(|(name, p)| Series {
                        name: name.clone(),
                        points: p.t.iter().copied().zip(p.values.iter().copied()).collect(),
                    })
                    .collect(),
            };
            self.write("probe.svg", &plot.to_svg())?;
        }
        Ok(report)
    }
}

/// `probe.csv` → `probe_<suffix>.csv`.
fn suffixed(name: &str, suffix: &str) -> String {
    match name.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{suffix}.{ext}"),
        None => format!("{name}_{suffix}"),
    }
}

/// Runs one pipeline and writes its outputs, including the effective configuration.
pub fn run_scenario(command: Command, config: &ScenarioConfig) -> Result<Outcome> {
    let backend = config.backend()?;
    let omega = config.omega(&backend)?;
    let mut ctx = Context {
        config,
        dir: config.outputs.directory.clone(),
        backend,
        omega,
        outcome: Outcome { require_convergence: config.require_convergence, ..Outcome::default() },
    };
    info!("{} backend with {} grid points", ctx.backend.kind().name(), ctx.backend.len());
    let effective = config.outputs.effective_config.clone();
    ctx.write(&effective, &config.to_toml_string())?;
    match command {
        Command::Simulate => {
            ctx.simulate()?;
        }
        Command::Functionals => {
            let phi = ctx.initial()?;
            let name = config.outputs.functionals_json.clone();
            ctx.functionals(&phi, &name)?;
        }
        Command::CheckCone => {
            ctx.check_cone()?;
        }
        Command::GeodesicProbe => {
            ctx.geodesic_probe()?;
        }
        Command::Report => {
            let phi = ctx.initial()?;
            let name = config.outputs.functionals_json.clone();
            ctx.functionals(&phi, &name)?;
            ctx.check_cone()?;
            if ctx.backend.kind() == BackendKind::Sphere {
                ctx.geodesic_probe()?;
            } else {
                info!("skipping the geodesic probe on the torus");
            }
            let run = ctx.simulate()?;
            ctx.functionals(&run.final_phi, &suffixed(&name, "final"))?;
        }
    }
    Ok(ctx.outcome)
}

/// Loads, applies overrides and runs; returns the process exit code.
pub fn run_path(command: Command, path: &Path, overrides: impl FnOnce(&mut ScenarioConfig)) -> i32 {
    let mut config = match ScenarioConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    overrides(&mut config);
    match run_scenario(command, &config) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for_error(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_keeps_extension() {
        assert_eq!(suffixed("probe.csv", "j_hat"), "probe_j_hat.csv");
        assert_eq!(suffixed("probe", "x"), "probe_x");
    }

    #[test]
    fn exit_codes() {
        let mut o = Outcome { flow_status: Some(FlowStatus::NonConvergence), ..Outcome::default() };
        assert_eq!(o.exit_code(), EXIT_OK);
        o.require_convergence = true;
        assert_eq!(o.exit_code(), EXIT_NON_CONVERGENCE);
        o.flow_status = Some(FlowStatus::StepStalled { t: 0.0, dt: 0.0 });
        assert_eq!(o.exit_code(), EXIT_STALLED);
        assert_eq!(exit_code_for_error(&JflowError::Config("x".into())), EXIT_CONFIG);
    }
}
