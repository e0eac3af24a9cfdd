use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_jflow");
const ROOT: &str = env!("CARGO_MANIFEST_DIR");

fn scenario(name: &str) -> PathBuf {
    Path::new(ROOT).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("JFLOW_LOG").output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_TORUS: &str = r#"
[backend]
kind = "torus"
points = 32

[reference]
chi0_multiple = 2.0
hessian_offset = "sine(-0.01, 1)"

[initial]
expression = "cosine(0.005, 2)"

[flow]
t_max = 0.5
residual_target = 1e-4
"#;

const SMALL_SPHERE: &str = r#"
[backend]
kind = "sphere"
points = 64

[initial]
expression = "moment_cos(0.1, 1)"

[flow]
t_max = 1.0
residual_target = 1e-3

[geodesic]
steps = 8
moment_points = 257
functionals = ["j_tilde", "entropy", "aubin_i"]
"#;

fn schema_check(schema: &str, json_path: &Path) {
    let schema: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(Path::new(ROOT).join("schemas").join(schema)).unwrap()).unwrap();
    let instance: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{}: {errors:?}", json_path.display());
}

#[test]
fn simulate_torus_writes_csv_and_json() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "simulate",
        "--config",
        scenario("torus_n1.toml").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,dt,E,dE_dt_measured,dE_dt_predicted,rhs_min,rhs_max,lambda_max,floor_constant,residual,suspect"
    );
    assert!(csv.lines().count() > 2);
    schema_check("final_state.schema.json", &out.path().join("final_state.json"));
    let state: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("final_state.json")).unwrap()).unwrap();
    assert_eq!(state["status"], "converged");
}

#[test]
fn check_cone_on_sphere_fails_condition_two() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&[
        "check-cone",
        "--config",
        scenario("sphere.toml").to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let path = out.path().join("hypotheses.json");
    schema_check("hypothesis_report.schema.json", &path);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(report["pass"]["condition_2"], false);
    assert!(report["condition_margins"]["condition_2"].as_f64().unwrap() < 0.0);
}

#[test]
fn malformed_key_exits_two_and_echoes_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[flow]\nt_maks = 3.0\n");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("t_maks = 3.0"), "{stderr}");
}

#[test]
fn bad_expression_exits_two_and_echoes_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[reference]\nhessian_offset = \"sine(0.1, 1\"\n");
    let o = run(&["functionals", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hessian_offset = \"sine(0.1, 1\""));
}

#[test]
fn missing_config_file_exits_two() {
    let o = run(&["simulate", "--config", "/nonexistent/scenario.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn geodesic_probe_on_torus_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_TORUS);
    let o = run(&["geodesic-probe", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stalled_step_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL_TORUS}dt_min = 1.0\n"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let state: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("final_state.json")).unwrap()).unwrap();
    assert_eq!(state["status"], "step-stalled");
}

#[test]
fn required_convergence_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("require_convergence = true\n{}", SMALL_TORUS.replace("t_max = 0.5", "t_max = 1e-4"));
    let cfg = write_config(dir.path(), &body);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let relaxed = write_config(dir.path(), &body.replace("require_convergence = true", "require_convergence = false"));
    let o = run(&["simulate", "--config", relaxed.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn same_scenario_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("seed = 5\n{}", SMALL_SPHERE.replace("expression = \"moment_cos(0.1, 1)\"", "random = true")),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o =
            run(&["report", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "trajectory.csv",
        "final_state.json",
        "functionals.json",
        "functionals_final.json",
        "hypotheses.json",
        "probe.json",
    ] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_changes_random_initial_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL_SPHERE.replace("expression = \"moment_cos(0.1, 1)\"", "random = true"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o =
            run(&["functionals", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", seed]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_ne!(std::fs::read(a.join("functionals.json")).unwrap(), std::fs::read(b.join("functionals.json")).unwrap());
    let echoed = std::fs::read_to_string(b.join("effective_config.toml")).unwrap();
    assert!(echoed.contains("seed = 2"));
}

#[test]
fn effective_config_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_TORUS);
    let first = dir.path().join("first");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", first.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(o.status.code(), Some(0));
    let echoed = first.join("effective_config.toml");
    let second = dir.path().join("second");
    let o = run(&["simulate", "--config", echoed.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for name in ["trajectory.csv", "final_state.json"] {
        assert_eq!(std::fs::read(first.join(name)).unwrap(), std::fs::read(second.join(name)).unwrap(), "{name}");
    }
    let reechoed = std::fs::read_to_string(second.join("effective_config.toml")).unwrap();
    assert_eq!(reechoed.replace("second", "first"), std::fs::read_to_string(echoed).unwrap());
}

#[test]
fn svg_plots_have_one_polyline_per_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SPHERE);
    let o = run(&["report", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "--plot", "svg"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for (name, series) in [("energy.svg", 1), ("residual.svg", 1), ("probe.svg", 3)] {
        let svg = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), series, "{name}");
    }
    for name in ["probe_j_tilde.csv", "probe_entropy.csv", "probe_aubin_i.csv"] {
        let csv = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "t,value,second_difference");
        assert_eq!(csv.lines().count(), 10);
    }
}

#[test]
fn report_outputs_validate_against_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SPHERE);
    let o = run(&["report", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    for (schema, file) in [
        ("functional_report.schema.json", "functionals.json"),
        ("functional_report.schema.json", "functionals_final.json"),
        ("hypothesis_report.schema.json", "hypotheses.json"),
        ("final_state.schema.json", "final_state.json"),
        ("geodesic_probe_report.schema.json", "probe.json"),
    ] {
        schema_check(schema, &dir.path().join(file));
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("functionals.json")).unwrap()).unwrap();
    let keys: Vec<&str> = report.as_object().unwrap().keys().map(String::as_str).collect();
    for k in ["c", "I", "J", "j_hat", "j_tilde", "entropy", "k_energy", "k_energy_modified", "E"] {
        assert!(keys.contains(&k), "{k}");
    }
}

#[test]
fn reference_page_is_current_and_in_help() {
    let o = run(&["config-reference"]);
    assert_eq!(o.status.code(), Some(0));
    let shipped = std::fs::read_to_string(Path::new(ROOT).join("docs/config-reference.md")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), shipped);
    let help = String::from_utf8(run(&["--help"]).stdout).unwrap();
    assert!(help.contains("flow.residual_target") && help.contains("JFLOW_LOG"));
}
