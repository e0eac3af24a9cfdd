//! Scenario configuration files.
//!
//! Scenarios are TOML documents. Every table rejects unknown keys and every
//! key has a default, so an empty file is a valid scenario (a flat
//! one-dimensional torus). [`reference_page`] renders the documented keys
//! together with their defaults.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::{JflowError, Result};
use crate::flow::FlowParams;
use crate::functionals::{PathQuadrature, DEFAULT_PATH_STEPS};
use crate::geodesic::{FunctionalId, DEFAULT_MOMENT_POINTS};
use crate::geometry::potentials::{random_kahler_potential, random_sphere_expr, PotentialExpr};
use crate::geometry::{
    complex_hessian, BackendKind, GeometryBackend, HermitianFormField, PotentialField, DEFAULT_POSITIVITY_FLOOR,
    DEFAULT_SPHERE_TRUNCATION,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotFormat {
    #[default]
    None,
    Svg,
}

impl std::str::FromStr for PlotFormat {
    type Err = JflowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "svg" => Ok(Self::Svg),
            _ => Err(JflowError::Config(format!("unknown plot format `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// Complex dimension of the torus. The sphere is always one-dimensional.
    pub n: usize,
    /// Grid points per axis (torus) or along the radial chart (sphere).
    pub points: usize,
    /// Explicit per-axis torus grid; overrides `n` and `points`.
    pub shape: Option<Vec<usize>>,
    pub truncation: f64,
    pub positivity_floor: f64,
}

impl Default for BackendSpec {
    fn default() -> Self {
        Self {
            kind: BackendKind::Torus,
            n: 1,
            points: 64,
            shape: None,
            truncation: DEFAULT_SPHERE_TRUNCATION,
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
        }
    }
}

/// `ω = a·χ0 + (i/2)∂∂̄ψ` for a potential expression `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSpec {
    pub chi0_multiple: f64,
    pub hessian_offset: String,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self { chi0_multiple: 1.0, hessian_offset: "zero".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub expression: String,
    /// Draw a random Kähler potential from the scenario seed instead.
    pub random: bool,
    pub amplitude: f64,
    pub modes: usize,
    pub max_deformation: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self { expression: "zero".into(), random: false, amplitude: 0.3, modes: 3, max_deformation: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FunctionalSpec {
    pub report: bool,
    pub path_steps: usize,
}

impl Default for FunctionalSpec {
    fn default() -> Self {
        Self { report: true, path_steps: DEFAULT_PATH_STEPS }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicSpec {
    pub start: String,
    pub end: String,
    pub random_endpoints: bool,
    pub amplitude: f64,
    pub modes: usize,
    pub max_deformation: f64,
    pub steps: usize,
    pub moment_points: usize,
    pub functionals: Vec<FunctionalId>,
}

impl Default for GeodesicSpec {
    fn default() -> Self {
        Self {
            start: "moment_cos(0.1, 1)".into(),
            end: "moment_cos(-0.1, 2)".into(),
            random_endpoints: false,
            amplitude: 0.5,
            modes: 4,
            max_deformation: 0.7,
            steps: 64,
            moment_points: DEFAULT_MOMENT_POINTS,
            functionals: vec![FunctionalId::JTilde],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesisSpec {
    pub epsilon: f64,
    pub alpha_lower_bound: f64,
    /// Check the subsolution condition against the configured `ω` instead of `εχ0 − Ric(χ0)`.
    pub use_reference_form: bool,
    pub subsolution_potential: Option<String>,
}

impl Default for HypothesisSpec {
    fn default() -> Self {
        Self { epsilon: 0.1, alpha_lower_bound: 0.1, use_reference_form: false, subsolution_potential: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub plot: PlotFormat,
    pub trajectory_csv: String,
    pub final_state_json: String,
    pub functionals_json: String,
    pub hypotheses_json: String,
    pub probe_csv: String,
    pub probe_json: String,
    pub effective_config: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("jflow-out"),
            plot: PlotFormat::None,
            trajectory_csv: "trajectory.csv".into(),
            final_state_json: "final_state.json".into(),
            functionals_json: "functionals.json".into(),
            hypotheses_json: "hypotheses.json".into(),
            probe_csv: "probe.csv".into(),
            probe_json: "probe.json".into(),
            effective_config: "effective_config.toml".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Level constant override; defaults to the cohomological value for `ω`.
    pub c: Option<f64>,
    /// Treat a flow that misses its residual target as a failure.
    pub require_convergence: bool,
    pub backend: BackendSpec,
    pub reference: ReferenceSpec,
    pub initial: InitialSpec,
    pub flow: FlowParams,
    pub functionals: FunctionalSpec,
    pub geodesic: GeodesicSpec,
    pub hypotheses: HypothesisSpec,
    pub outputs: OutputSpec,
}

/// Source line containing `needle`, formatted for an error message.
fn echo_line(source: &str, needle: &str) -> String {
    source
        .lines()
        .enumerate()
        .find(|(_, l)| l.contains(needle))
        .map(|(i, l)| format!("\n  line {}: {}", i + 1, l.trim_end()))
        .unwrap_or_default()
}

fn parse_expr(text: &str, source: &str) -> Result<PotentialExpr> {
    text.parse().map_err(|e: JflowError| JflowError::Config(format!("{e}{}", echo_line(source, text))))
}

impl ScenarioConfig {
    pub fn from_toml_str(source: &str) -> Result<Self> {
        let config: Self = toml::from_str(source).map_err(|e| JflowError::Config(e.to_string()))?;
        config.validate(source)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| JflowError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&source)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    fn validate(&self, source: &str) -> Result<()> {
        let err = |msg: String, key: &str| Err(JflowError::Config(format!("{msg}{}", echo_line(source, key))));
        parse_expr(&self.reference.hessian_offset, source)?;
        parse_expr(&self.initial.expression, source)?;
        parse_expr(&self.geodesic.start, source)?;
        parse_expr(&self.geodesic.end, source)?;
        if let Some(psi) = &self.hypotheses.subsolution_potential {
            parse_expr(psi, source)?;
        }
        if let Err(JflowError::Config(msg)) = self.flow.validate() {
            return err(msg, "[flow]");
        }
        if self.functionals.path_steps < 3 || self.functionals.path_steps.is_multiple_of(2) {
            return err("functionals.path_steps must be odd and at least 3".into(), "path_steps");
        }
        if self.geodesic.steps < 2 {
            return err("geodesic.steps must be at least 2".into(), "steps");
        }
        if !(self.reference.chi0_multiple.is_finite()) {
            return err("reference.chi0_multiple must be finite".into(), "chi0_multiple");
        }
        Ok(())
    }

    pub fn backend(&self) -> Result<GeometryBackend> {
        let spec = &self.backend;
        let b = match spec.kind {
            BackendKind::Torus => match &spec.shape {
                Some(shape) => GeometryBackend::torus_with_shape(shape.clone())?,
                None => GeometryBackend::torus(spec.n, spec.points)?,
            },
            BackendKind::Sphere => {
                if spec.n != 1 {
                    return Err(JflowError::Config("the sphere backend has n = 1".into()));
                }
                GeometryBackend::sphere(spec.points, spec.truncation)?
            }
        };
        Ok(b.with_positivity_floor(spec.positivity_floor))
    }

    /// The reference form `ω`; it must be a Kähler form.
    pub fn omega(&self, b: &GeometryBackend) -> Result<HermitianFormField> {
        let psi = self.reference.hessian_offset.parse::<PotentialExpr>()?.sample(b)?;
        let omega = b.chi0().scaled(self.reference.chi0_multiple).add(&complex_hessian(&psi, b)?);
        match omega.min_eigenvalue() {
            Some((p, min)) if !(min > 0.0) => Err(JflowError::Config(format!(
                "reference form is not positive (eigenvalue {min:e} at grid point {p})"
            ))),
            _ => Ok(omega),
        }
    }

    /// Stream-separated generator so that each consumer of the seed is independent.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn initial_potential(&self, b: &GeometryBackend) -> Result<PotentialField> {
        let spec = &self.initial;
        if spec.random {
            random_kahler_potential(b, &mut self.rng(1), spec.amplitude, spec.modes, spec.max_deformation)
        } else {
            spec.expression.parse::<PotentialExpr>()?.sample(b)
        }
    }

    pub fn quadrature(&self) -> Result<PathQuadrature> {
        PathQuadrature::new(self.functionals.path_steps)
    }

    pub fn geodesic_endpoints(&self, b: &GeometryBackend) -> Result<(PotentialExpr, PotentialExpr)> {
        let spec = &self.geodesic;
        if spec.random_endpoints {
            let mut rng = self.rng(2);
            let a = random_sphere_expr(b, &mut rng, spec.amplitude, spec.modes, spec.max_deformation)?;
            let e = random_sphere_expr(b, &mut rng, spec.amplitude, spec.modes, spec.max_deformation)?;
            Ok((a, e))
        } else {
            Ok((spec.start.parse()?, spec.end.parse()?))
        }
    }

    pub fn subsolution_potential(&self, b: &GeometryBackend) -> Result<Option<PotentialField>> {
        self.hypotheses.subsolution_potential.as_ref().map(|e| e.parse::<PotentialExpr>()?.sample(b)).transpose()
    }
}

/// Documented keys: dotted path, description, example value for keys without a default.
pub const CONFIG_KEYS: &[(&str, &str, Option<&str>)] = &[
    ("seed", "Seed for random potentials and geodesic endpoints", None),
    ("c", "Level constant override (default: cohomological value for the reference form)", Some("1.0")),
    ("require_convergence", "Exit with status 4 when the flow misses its residual target", None),
    ("backend.kind", "`torus` or `sphere`", None),
    ("backend.n", "Complex dimension of the torus (the sphere has n = 1)", None),
    ("backend.points", "Grid points per axis (torus) or in the radial chart (sphere)", None),
    ("backend.shape", "Per-axis torus grid, overriding `n` and `points`", Some("[32, 32]")),
    ("backend.truncation", "Sphere chart covers `|s| <= truncation` with `s = log|z|^2`", None),
    ("backend.positivity_floor", "Minimum eigenvalue for a form to count as a Kähler metric", None),
    ("reference.chi0_multiple", "Multiple `a` of the reference metric in `ω = a χ0 + (i/2)∂∂̄ψ`", None),
    ("reference.hessian_offset", "Potential expression `ψ` in `ω = a χ0 + (i/2)∂∂̄ψ`", None),
    ("initial.expression", "Initial potential expression", None),
    ("initial.random", "Use a random Kähler potential drawn from `seed`", None),
    ("initial.amplitude", "Amplitude of the random initial potential", None),
    ("initial.modes", "Number of Fourier modes of the random initial potential", None),
    ("initial.max_deformation", "Random potentials satisfy `χ_φ >= (1 - max_deformation) χ0`", None),
    ("flow.t_max", "Final flow time", None),
    ("flow.residual_target", "Stop once the sup norm of the flow speed drops below this", None),
    ("flow.cfl_safety", "Fraction of the explicit stability limit used as time step", None),
    ("flow.dt_min", "Steps below this size stop the run with status 3", None),
    ("flow.dt_initial", "First time step (default: CFL limit, or 1e-3 for implicit steps)", Some("1e-4")),
    ("flow.dt_max", "Largest admissible time step", Some("1e-2")),
    ("flow.integrator", "`auto`, `rk4`, `euler` or `linearly-implicit`", None),
    ("flow.e_tol_relative", "Relative tolerance for energy increases before a step is rejected", None),
    ("flow.e_tol_absolute", "Absolute tolerance for energy increases before a step is rejected", None),
    ("flow.growth_factor", "Step growth factor after a run of accepted steps", None),
    ("flow.growth_after", "Accepted steps before the step grows", None),
    ("flow.max_steps", "Hard cap on the number of accepted steps", None),
    ("flow.c2_diagnostic_a", "Weight `A` of the monitored quantity `max(log Λ_ω χ - Aφ)`", Some("1.0")),
    ("functionals.report", "Write the functional report", None),
    ("functionals.path_steps", "Simpson nodes for path integrals (odd, >= 3)", None),
    ("geodesic.start", "Start potential expression of the probed geodesic (sphere)", None),
    ("geodesic.end", "End potential expression of the probed geodesic (sphere)", None),
    ("geodesic.random_endpoints", "Draw random analytic endpoints from `seed`", None),
    ("geodesic.amplitude", "Amplitude of random endpoints", None),
    ("geodesic.modes", "Modes of random endpoints", None),
    ("geodesic.max_deformation", "Deformation bound of random endpoints", None),
    ("geodesic.steps", "Path intervals; the path has `steps + 1` nodes", None),
    ("geodesic.moment_points", "Moment-grid points of the symplectic potentials", None),
    (
        "geodesic.functionals",
        "Probed functionals: j_tilde, j_hat, aubin_i, aubin_j, entropy, k_energy, k_energy_modified, energy",
        None,
    ),
    ("hypotheses.epsilon", "The constant `ε` of the properness conditions", None),
    ("hypotheses.alpha_lower_bound", "Lower bound for the alpha invariant", None),
    ("hypotheses.use_reference_form", "Check the subsolution condition against `ω` instead of `εχ0 - Ric(χ0)`", None),
    ("hypotheses.subsolution_potential", "Potential of the candidate subsolution (default: 0)", Some("\"zero\"")),
    ("outputs.directory", "Output directory (overridden by `--out`)", None),
    ("outputs.plot", "`none` or `svg` (overridden by `--plot`)", None),
    ("outputs.trajectory_csv", "Trajectory file name", None),
    ("outputs.final_state_json", "Final flow state file name", None),
    ("outputs.functionals_json", "Functional report file name", None),
    ("outputs.hypotheses_json", "Hypothesis report file name", None),
    ("outputs.probe_csv", "Convexity probe table file name", None),
    ("outputs.probe_json", "Convexity probe report file name", None),
    ("outputs.effective_config", "File name of the echoed effective configuration", None),
];

fn lookup<'a>(value: &'a toml::Value, dotted: &str) -> Option<&'a toml::Value> {
    dotted.split('.').try_fold(value, |v, k| v.get(k))
}

fn render_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => format!("{s:?}"),
        toml::Value::Float(f) => format!("{f:e}"),
        other => other.to_string(),
    }
}

/// Markdown table of every key with its default.
pub fn reference_page() -> String {
    let defaults = toml::Value::try_from(ScenarioConfig::default()).expect("defaults serialize");
    let mut out = String::from(
        "# Scenario configuration reference\n\n\
         Scenario files are TOML. Unknown keys are rejected. Every key is optional.\n\n\
         Potential expressions are sums of `zero`, `const(c)`, `sine(a, k[, axis])`, `cosine(a, k[, axis])`,\n\
         `mixed(a, k1, k2)` (torus) and `moment_cos(a, k)`, `moment_poly(a, p)` (sphere).\n\n\
         | key | default | description |\n|---|---|---|\n",
    );
    for (key, description, example) in CONFIG_KEYS {
        let default = match lookup(&defaults, key) {
            Some(v) => format!("`{}`", render_value(v)),
            None => format!("unset (e.g. `{}`)", example.unwrap_or("")),
        };
        out.push_str(&format!("| `{key}` | {default} | {description} |\n"));
    }
    out
}
