use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coagkin"));
    c.env("COAGKIN_THREADS", "1");
    c
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(value).unwrap()).unwrap();
    p
}

fn base(k: usize, t_end: f64) -> Value {
    json!({
        "kernel": {"type": "constant", "params": {"c": 1.0}},
        "initial": {"type": "monomer", "mass_scale": 1.0},
        "truncation_k": k,
        "solver": {"t_end": t_end, "rel_tol": 1e-8, "abs_tol": 1e-10},
        "output_dir": "out",
        "seed": 7
    })
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &base(64, 10.0));
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["trajectory.csv", "diagnostics.csv", "summary.json", "moments.svg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["status"], "pass");
    assert_eq!(summary["config_echo"]["run"]["truncation_k"], 64);
    assert!(summary["thresholds"]["mass_slack"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["artifacts"].as_array().unwrap().len(), 4);

    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("t,xi_1,xi_2"));
    assert_eq!(header.split(',').count(), 65);
    assert_eq!(csv.lines().count(), 102);
    assert!(fs::read_to_string(out.join("diagnostics.csv")).unwrap().starts_with("t,M0,M1,M2,"));
    // nothing outside output_dir besides the config itself
    let mut entries: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    entries.sort();
    assert_eq!(entries, vec!["out", "run.json"]);
}

#[test]
fn config_echo_reproduces_trajectory_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &base(16, 2.0));
    assert_eq!(code(&run(&["simulate", cfg.to_str().unwrap()])), 0);
    let first = fs::read(dir.path().join("out/trajectory.csv")).unwrap();
    let summary = read_json(&dir.path().join("out/summary.json"));
    let mut echo = summary["config_echo"]["run"].clone();
    echo["output_dir"] = json!(dir.path().join("again").to_str().unwrap());
    let cfg2 = write_config(dir.path(), "echo.json", &echo);
    assert_eq!(code(&run(&["simulate", cfg2.to_str().unwrap()])), 0);
    let second = fs::read(dir.path().join("again/trajectory.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn truncation_one_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", &base(1, 1.0));
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("truncation_k"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn understated_growth_constant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(16, 1.0);
    v["kernel"] = json!({"type": "additive", "params": {"a": 1.0}, "A": 0.5});
    let cfg = write_config(dir.path(), "run.json", &v);
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("admissible"), "{}", stderr(&o));
    assert!(stderr(&o).contains("(1,1)"), "{}", stderr(&o));
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\n  \"kernel\": {\"type\": \"constant\"},\n  \"truncation_k\": ,\n}").unwrap();
    let o = run(&["simulate", p.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(8, 1.0);
    v["truncaton_k"] = json!(8);
    let cfg = write_config(dir.path(), "run.json", &v);
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("truncaton_k"), "{}", stderr(&o));
}

#[test]
fn missing_table_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(8, 1.0);
    v["kernel"] = json!({"type": "table", "params": {"path": "nope.csv"}, "A": 1.0});
    let cfg = write_config(dir.path(), "run.json", &v);
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("kernel.params.path"), "{}", stderr(&o));
}

#[test]
fn table_kernel_and_file_initial_data_resolve_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = String::from("i,j,gamma\n");
    for i in 1..=8 {
        for j in 1..=i {
            rows.push_str(&format!("{i},{j},1.0\n"));
        }
    }
    fs::write(dir.path().join("kernel.csv"), rows).unwrap();
    fs::write(dir.path().join("init.txt"), "0.5\n0.25\n").unwrap();
    let mut v = base(8, 1.0);
    v["kernel"] = json!({"type": "table", "params": {"path": "kernel.csv"}, "A": 1.0, "delta": 0.0, "zeta": 1.0});
    v["initial"] = json!({"type": "file", "path": "init.txt"});
    let cfg = write_config(dir.path(), "run.json", &v);
    let o = run(&["simulate", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out/trajectory.csv")).unwrap();
    let first: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(&first[..4], &[0.0, 0.5, 0.25, 0.0]);
}

fn verify_with(experiment: Value, k: usize) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(k, 5.0);
    v["experiment"] = experiment;
    let cfg = write_config(dir.path(), "run.json", &v);
    (run(&["verify", cfg.to_str().unwrap()]), dir)
}

#[test]
fn verify_identity_passes() {
    let (o, dir) = verify_with(json!({"name": "identity", "q_list": [8, 16, 31]}), 32);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&dir.path().join("out/identity_report.json"));
    assert_eq!(r["status"], "pass");
    assert!(r["thresholds"]["residual"].as_f64().unwrap() > 0.0);
    assert!(r["metrics"]["random_states.max_adjoint_residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn verify_truncation_passes_and_plots_defects() {
    let (o, dir) = verify_with(json!({"name": "truncation", "k_list": [16, 32, 64]}), 16);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("out/defect_vs_k.svg").is_file());
    let r = read_json(&dir.path().join("out/truncation_report.json"));
    assert_eq!(r["config_echo"]["experiment"]["params"]["k_list"], json!([16, 32, 64]));
}

#[test]
fn verify_truncation_needs_three_truncations() {
    let (o, dir) = verify_with(json!({"name": "truncation", "k_list": [4]}), 8);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("k_list"), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn verify_unknown_experiment_lists_names() {
    let (o, _dir) = verify_with(json!({"name": "gelation"}), 8);
    assert_eq!(code(&o), 1);
    let e = stderr(&o);
    for name in ["truncation", "dependence", "decay", "identity", "admissibility", "weights"] {
        assert!(e.contains(name), "{e}");
    }
}

#[test]
fn verify_dependence_weights_and_admissibility_pass() {
    for (exp, file) in [
        (json!({"name": "dependence"}), "dependence_report.json"),
        (json!({"name": "weights", "max_size": 200}), "weights_report.json"),
        (json!({"name": "admissibility"}), "admissibility_report.json"),
    ] {
        let (o, dir) = verify_with(exp, 32);
        assert_eq!(code(&o), 0, "{file}: {}", stderr(&o));
        assert_eq!(read_json(&dir.path().join("out").join(file))["status"], "pass");
    }
}

#[test]
fn verify_admissibility_failure_is_a_verification_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(8, 1.0);
    v["kernel"] = json!({"type": "additive", "params": {"a": 1.0}, "A": 0.5});
    v["experiment"] = json!({"name": "admissibility"});
    let cfg = write_config(dir.path(), "run.json", &v);
    let o = run(&["verify", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert_eq!(read_json(&dir.path().join("out/admissibility_report.json"))["status"], "fail");
}

#[test]
fn verify_decay_reports_envelope_and_component_checks() {
    let (o, dir) = verify_with(json!({"name": "decay"}), 128);
    let r = read_json(&dir.path().join("out/decay_report.json"));
    let passed = |name: &str| {
        r["checks"]
            .as_array()
            .unwrap()
            .iter()
            .find(|c| c["name"] == name)
            .map(|c| c["passed"].as_bool().unwrap())
            .unwrap()
    };
    assert!(passed("number_nonincreasing"));
    assert!(passed("riccati_envelope"));
    assert!(r["metrics"]["M0_final"].as_f64().unwrap() <= 0.0198);
    // xi_1(100) is still ~2.5e-4 for this horizon, so the default 1e-4 limit fails.
    assert!(!passed("components_vanish"));
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_decay_passes_with_relaxed_component_limits() {
    let (o, _dir) = verify_with(
        json!({"name": "decay", "t_end": 100.0, "tol_conv": 1e-4, "tol_limit": 1e-3}),
        128,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn kernels_list_and_schema_print() {
    let o = run(&["kernels", "list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.contains("\"type\":\"additive\""));
    let o = run(&["schema", "print"]);
    assert_eq!(code(&o), 0);
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(schema["required"][2], "truncation_k");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["simulate"])), 1);
    assert_eq!(code(&run(&["simulate", "/nonexistent/run.json"])), 1);
}

#[cfg(unix)]
#[test]
fn ctrl_c_writes_an_interrupted_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = base(64, 100.0);
    v["solver"]["mode"] = json!({"type": "fixed_step", "h": 1e-6});
    let cfg = write_config(dir.path(), "run.json", &v);
    let mut child = bin().args(["simulate", cfg.to_str().unwrap()]).spawn().unwrap();
    std::thread::sleep(Duration::from_millis(500));
    let status = Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let exit = child.wait().unwrap();
    assert_eq!(exit.code(), Some(130));
    let r = read_json(&dir.path().join("out/summary.json"));
    assert_eq!(r["status"], "interrupted");
}
