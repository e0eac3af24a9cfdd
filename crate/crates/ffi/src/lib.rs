//! C ABI over the `jflow` crate.
//!
//! Every fallible function returns a [`JflowStatus`]; on failure a message is
//! available from [`jflow_last_error_message`] on the calling thread. Objects
//! are opaque handles released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use jflow::config::ScenarioConfig;
use jflow::flow::{run_flow, FlowParams, FlowProblem, FlowRun, FlowStatus};
use jflow::functionals::{evaluate_all, PathQuadrature};
use jflow::geometry::potentials::PotentialExpr;
use jflow::geometry::{GeometryBackend, PotentialField};
use jflow::scenario::{exit_code_for_error, run_scenario, Command};
use jflow::JflowError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    ShapeMismatch = 4,
    NotKahler = 5,
    StepStalled = 6,
    ConvexityLost = 7,
    UnsupportedBackend = 8,
    Io = 9,
    Serialization = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JflowCommand {
    Simulate = 0,
    Functionals = 1,
    CheckCone = 2,
    GeodesicProbe = 3,
    Report = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JflowFlowStatus {
    Converged = 0,
    NonConvergence = 1,
    StepStalled = 2,
}

/// A discretised torus or sphere.
pub struct JflowBackend(GeometryBackend);

/// Potential values on the grid of one backend.
pub struct JflowPotential(PotentialField);

/// A parsed scenario file.
pub struct JflowScenario(ScenarioConfig);

/// The outcome of one flow run.
pub struct JflowFlowResult(FlowRun);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JflowFunctionals {
    pub c: f64,
    pub i: f64,
    pub j: f64,
    pub j_hat: f64,
    pub j_tilde: f64,
    pub entropy: f64,
    pub k_energy: f64,
    pub k_energy_modified: f64,
    pub energy: f64,
}

/// Non-positive `dt_max` and zero `max_steps` keep the library defaults.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JflowFlowOptions {
    pub t_max: f64,
    pub residual_target: f64,
    pub dt_max: f64,
    pub max_steps: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JflowFlowSummary {
    pub status: JflowFlowStatus,
    pub c: f64,
    pub t: f64,
    pub energy: f64,
    pub residual: f64,
    pub steps: usize,
    pub rejected_steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(JflowStatus, String);

impl From<JflowError> for Failure {
    fn from(e: JflowError) -> Self {
        let status = match &e {
            JflowError::Config(_) => JflowStatus::Config,
            JflowError::ShapeMismatch { .. } => JflowStatus::ShapeMismatch,
            JflowError::NotKahler { .. } => JflowStatus::NotKahler,
            JflowError::StepStalled { .. } => JflowStatus::StepStalled,
            JflowError::ConvexityLost(_) => JflowStatus::ConvexityLost,
            JflowError::UnsupportedBackend(_) => JflowStatus::UnsupportedBackend,
            JflowError::Io(_) => JflowStatus::Io,
            JflowError::Json(_) => JflowStatus::Serialization,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> Outcome) -> JflowStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JflowStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            JflowStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(JflowStatus::NullPointer, format!("{name} is null")))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(JflowStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(JflowStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(JflowStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Outcome {
    let out = deref_mut(out, "out")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn check_len(b: &GeometryBackend, phi: &PotentialField) -> Outcome {
    if phi.len() != b.len() {
        return Err(JflowError::ShapeMismatch { expected: b.len(), got: phi.len() }.into());
    }
    Ok(())
}

/// Message for the most recent failure on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn jflow_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Static, nul-terminated version string.
#[no_mangle]
pub extern "C" fn jflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn jflow_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_torus(n: usize, points: usize, out: *mut *mut JflowBackend) -> JflowStatus {
    guard(|| emit(out, JflowBackend(GeometryBackend::torus(n, points)?)))
}

/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_sphere(
    points: usize,
    truncation: f64,
    out: *mut *mut JflowBackend,
) -> JflowStatus {
    guard(|| emit(out, JflowBackend(GeometryBackend::sphere(points, truncation)?)))
}

/// Number of grid points, or 0 for a null handle.
///
/// # Safety
/// `b` must be null or a live backend handle.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_len(b: *const JflowBackend) -> usize {
    b.as_ref().map_or(0, |b| b.0.len())
}

/// Complex dimension, or 0 for a null handle.
///
/// # Safety
/// `b` must be null or a live backend handle.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_dim(b: *const JflowBackend) -> usize {
    b.as_ref().map_or(0, |b| b.0.dim())
}

/// Points along `axis`, or 0 for a null handle or an axis out of range.
///
/// # Safety
/// `b` must be null or a live backend handle.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_axis_len(b: *const JflowBackend, axis: usize) -> usize {
    b.as_ref().filter(|b| axis < b.0.dim()).map_or(0, |b| b.0.coordinates(axis).len())
}

/// Copies the grid coordinates along `axis` into `buf`, which must hold
/// [`jflow_backend_axis_len`] values.
///
/// # Safety
/// `b` must be a live backend handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_coordinates(
    b: *const JflowBackend,
    axis: usize,
    buf: *mut f64,
    len: usize,
) -> JflowStatus {
    guard(|| {
        let b = &deref(b, "backend")?.0;
        if axis >= b.dim() {
            return Err(Failure(JflowStatus::InvalidArgument, format!("axis {axis} out of range")));
        }
        let coords = b.coordinates(axis);
        if len != coords.len() {
            return Err(JflowError::ShapeMismatch { expected: coords.len(), got: len }.into());
        }
        deref_mut(buf, "buf")?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(coords);
        Ok(())
    })
}

/// # Safety
/// `b` must be null or a live backend handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jflow_backend_free(b: *mut JflowBackend) {
    free(b)
}

/// Samples an expression such as `"cosine(0.01, 2) + sine(0.02, 1, 1)"`.
///
/// # Safety
/// `b` must be a live backend handle, `expr` a nul-terminated string and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_potential_from_expr(
    b: *const JflowBackend,
    expr: *const c_char,
    out: *mut *mut JflowPotential,
) -> JflowStatus {
    guard(|| {
        let b = &deref(b, "backend")?.0;
        let phi = text(expr, "expr")?.parse::<PotentialExpr>()?.sample(b)?;
        emit(out, JflowPotential(phi))
    })
}

/// # Safety
/// `b` must be a live backend handle, `values` valid for `len` reads and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_potential_from_values(
    b: *const JflowBackend,
    values: *const f64,
    len: usize,
    out: *mut *mut JflowPotential,
) -> JflowStatus {
    guard(|| {
        let b = &deref(b, "backend")?.0;
        deref(values, "values")?;
        let phi = PotentialField::new(std::slice::from_raw_parts(values, len).to_vec())?;
        check_len(b, &phi)?;
        emit(out, JflowPotential(phi))
    })
}

/// Number of values, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live potential handle.
#[no_mangle]
pub unsafe extern "C" fn jflow_potential_len(p: *const JflowPotential) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `p` must be a live potential handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_potential_copy_values(
    p: *const JflowPotential,
    buf: *mut f64,
    len: usize,
) -> JflowStatus {
    guard(|| {
        let p = &deref(p, "potential")?.0;
        if len != p.len() {
            return Err(JflowError::ShapeMismatch { expected: p.len(), got: len }.into());
        }
        deref_mut(buf, "buf")?;
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(p.values());
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a live potential handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jflow_potential_free(p: *mut JflowPotential) {
    free(p)
}

/// Evaluates the energy functionals of `phi` with `ω = omega_multiple·χ0`.
/// `path_steps = 0` selects the default quadrature.
///
/// # Safety
/// Handles must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_functionals(
    b: *const JflowBackend,
    phi: *const JflowPotential,
    omega_multiple: f64,
    path_steps: usize,
    out: *mut JflowFunctionals,
) -> JflowStatus {
    guard(|| {
        let b = &deref(b, "backend")?.0;
        let phi = &deref(phi, "potential")?.0;
        let out = deref_mut(out, "out")?;
        check_len(b, phi)?;
        let quad = if path_steps == 0 { PathQuadrature::default() } else { PathQuadrature::new(path_steps)? };
        let r = evaluate_all(phi, &b.chi0().scaled(omega_multiple), b, quad)?;
        *out = JflowFunctionals {
            c: r.c,
            i: r.i,
            j: r.j,
            j_hat: r.j_hat,
            j_tilde: r.j_tilde,
            entropy: r.entropy,
            k_energy: r.k_energy,
            k_energy_modified: r.k_energy_modified,
            energy: r.e,
        };
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn jflow_flow_options_default() -> JflowFlowOptions {
    let p = FlowParams::default();
    JflowFlowOptions { t_max: p.t_max, residual_target: p.residual_target, dt_max: 0.0, max_steps: p.max_steps }
}

/// Runs the flow from `phi0` with `ω = omega_multiple·χ0`. A null `options`
/// uses [`jflow_flow_options_default`]. Non-convergence and stalled steps are
/// reported through the summary, not the status.
///
/// # Safety
/// Handles must be live, `options` null or readable, `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_flow_run(
    b: *const JflowBackend,
    phi0: *const JflowPotential,
    omega_multiple: f64,
    options: *const JflowFlowOptions,
    out: *mut *mut JflowFlowResult,
) -> JflowStatus {
    guard(|| {
        let b = &deref(b, "backend")?.0;
        let phi0 = &deref(phi0, "potential")?.0;
        check_len(b, phi0)?;
        let opts = options.as_ref().copied().unwrap_or_else(|| jflow_flow_options_default());
        let mut params =
            FlowParams { t_max: opts.t_max, residual_target: opts.residual_target, ..FlowParams::default() };
        if opts.dt_max > 0.0 {
            params.dt_max = Some(opts.dt_max);
        }
        if opts.max_steps > 0 {
            params.max_steps = opts.max_steps;
        }
        params.validate()?;
        let problem = FlowProblem::new(b, b.chi0().scaled(omega_multiple), None)?;
        emit(out, JflowFlowResult(run_flow(&problem, phi0.clone(), &params)?))
    })
}

/// # Safety
/// `r` must be a live result handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_flow_result_summary(
    r: *const JflowFlowResult,
    out: *mut JflowFlowSummary,
) -> JflowStatus {
    guard(|| {
        let run = &deref(r, "result")?.0;
        let out = deref_mut(out, "out")?;
        let last = run.final_row();
        *out = JflowFlowSummary {
            status: match run.status {
                FlowStatus::Converged => JflowFlowStatus::Converged,
                FlowStatus::NonConvergence => JflowFlowStatus::NonConvergence,
                FlowStatus::StepStalled { .. } => JflowFlowStatus::StepStalled,
            },
            c: run.c,
            t: last.t,
            energy: last.e,
            residual: last.residual,
            steps: last.step,
            rejected_steps: run.rejected_steps,
        };
        Ok(())
    })
}

/// New handle holding the final potential, normalized to mean zero
/// against the reference measure when `normalized` is non-zero.
///
/// # Safety
/// `r` must be a live result handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_flow_result_potential(
    r: *const JflowFlowResult,
    normalized: c_int,
    out: *mut *mut JflowPotential,
) -> JflowStatus {
    guard(|| {
        let run = &deref(r, "result")?.0;
        let phi = if normalized != 0 { &run.final_phi_normalized } else { &run.final_phi };
        emit(out, JflowPotential(phi.clone()))
    })
}

/// Trajectory as CSV text; release with [`jflow_string_free`].
///
/// # Safety
/// `r` must be a live result handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_flow_result_trajectory_csv(
    r: *const JflowFlowResult,
    out: *mut *mut c_char,
) -> JflowStatus {
    guard(|| {
        let run = &deref(r, "result")?.0;
        let out = deref_mut(out, "out")?;
        *out = CString::new(run.trajectory_csv()).expect("csv has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a live result handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jflow_flow_result_free(r: *mut JflowFlowResult) {
    free(r)
}

/// Parses scenario TOML text.
///
/// # Safety
/// `toml` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_from_toml(toml: *const c_char, out: *mut *mut JflowScenario) -> JflowStatus {
    guard(|| emit(out, JflowScenario(ScenarioConfig::from_toml_str(text(toml, "toml")?)?)))
}

/// Reads a scenario file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_load(path: *const c_char, out: *mut *mut JflowScenario) -> JflowStatus {
    guard(|| emit(out, JflowScenario(ScenarioConfig::load(&PathBuf::from(text(path, "path")?))?)))
}

/// # Safety
/// `s` must be a live scenario handle and `dir` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_set_output_directory(s: *mut JflowScenario, dir: *const c_char) -> JflowStatus {
    guard(|| {
        let s = &mut deref_mut(s, "scenario")?.0;
        s.outputs.directory = PathBuf::from(text(dir, "dir")?);
        Ok(())
    })
}

/// # Safety
/// `s` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_set_seed(s: *mut JflowScenario, seed: u64) -> JflowStatus {
    guard(|| {
        deref_mut(s, "scenario")?.0.seed = seed;
        Ok(())
    })
}

/// Effective configuration as TOML; release with [`jflow_string_free`].
///
/// # Safety
/// `s` must be a live scenario handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_to_toml(s: *const JflowScenario, out: *mut *mut c_char) -> JflowStatus {
    guard(|| {
        let s = &deref(s, "scenario")?.0;
        let out = deref_mut(out, "out")?;
        *out = CString::new(s.to_toml_string()).expect("toml has no nul").into_raw();
        Ok(())
    })
}

/// Runs a pipeline and writes its files. `exit_code` (optional) receives the
/// command-line exit code: 0 success, 1 failure, 2 configuration error,
/// 3 stalled step, 4 required convergence not reached.
///
/// # Safety
/// `s` must be a live scenario handle; `exit_code` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_run(
    s: *const JflowScenario,
    command: JflowCommand,
    exit_code: *mut c_int,
) -> JflowStatus {
    guard(|| {
        let s = &deref(s, "scenario")?.0;
        let command = match command {
            JflowCommand::Simulate => Command::Simulate,
            JflowCommand::Functionals => Command::Functionals,
            JflowCommand::CheckCone => Command::CheckCone,
            JflowCommand::GeodesicProbe => Command::GeodesicProbe,
            JflowCommand::Report => Command::Report,
        };
        let (code, result) = match run_scenario(command, s) {
            Ok(outcome) => (outcome.exit_code(), Ok(())),
            Err(e) => (exit_code_for_error(&e), Err(e.into())),
        };
        if let Some(slot) = exit_code.as_mut() {
            *slot = code;
        }
        result
    })
}

/// # Safety
/// `s` must be null or a live scenario handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn jflow_scenario_free(s: *mut JflowScenario) {
    free(s)
}
