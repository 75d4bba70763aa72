//! End-to-end tests of the command-line contract: exit codes, report
//! determinism, plot table formats, and configuration error handling.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dichotomy-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("test file written");
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

#[test]
fn analyze_builtin_report_is_deterministic_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(&spec, "problem = \"scalar-tanh\"\n");
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");

    for out in [&first, &second] {
        let output = run(&["analyze", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(exit_code(&output), 0, "{output:?}");
    }
    let first_bytes = std::fs::read(&first).unwrap();
    let second_bytes = std::fs::read(&second).unwrap();
    assert_eq!(first_bytes, second_bytes, "reports must be byte-identical");

    let report: serde_json::Value = serde_json::from_slice(&first_bytes).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["verdict"], "pass");
    assert_eq!(report["integers"]["index"], 1);
    assert!(report.get("timings").is_none(), "timings are opt-in");
}

#[test]
fn analyze_without_out_prints_only_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(&spec, "problem = \"block-pair\"\n");
    let output = run(&["analyze", spec.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["problem"], "block-pair");
    assert_eq!(report["verdict"], "pass");
}

#[test]
fn analyze_inline_family_reports_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(
        &spec,
        r#"
name = "sign-flip"
window = 10

[family]
kind = "piecewise"
a_minus = [[1.0]]
a_plus = [[-1.0]]
"#,
    );
    let out = dir.path().join("report.json");
    let output = run(&["analyze", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "{output:?}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["problem"], "sign-flip");
    assert_eq!(report["integers"]["index"], 1);
    assert_eq!(report["expectation"], serde_json::Value::Null);
}

#[test]
fn analyze_csv_family_runs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("coefficients.csv");
    write(&csv, "0.0, -1.0, 0.3, 0.0, -2.0\n1.0, -1.0, 0.0, 0.1, -2.0\n");
    let spec = dir.path().join("spec.toml");
    write(
        &spec,
        &format!("window = 8\n\n[family]\nkind = \"csv\"\npath = \"{}\"\n", csv.display()),
    );
    let output = run(&["analyze", spec.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0, "{output:?}");
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["integers"]["index"], 0);
    assert_eq!(report["integers"]["rank_plus"], 2);
}

#[test]
fn analyze_expected_refusal_is_a_pass() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(&spec, "problem = \"hill-elliptic\"\n");
    let output = run(&["analyze", spec.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);
    let report: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["verdict"], "pass");
    assert!(report["refusal"].as_str().unwrap().contains("contour"));
    assert_eq!(report["integers"], serde_json::Value::Null);
}

#[test]
fn analyze_config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");

    let output = run(&["analyze", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2, "missing file is a config error");

    write(&spec, "problem = \"no-such-problem\"\n");
    let output = run(&["analyze", spec.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown builtin"));

    write(&spec, "window = 10\n");
    let output = run(&["analyze", spec.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 2, "spec without a problem is a config error");
}

#[test]
fn verify_filter_runs_matching_checks_and_rejects_unknown_tags() {
    let output = bin()
        .args(["verify", "--filter", "cli"])
        .env("DICHOTOMY_LAB_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("PASS [cli]"));
    assert!(!stdout.contains("[subspace]"), "filter must restrict tags");

    let output = run(&["verify", "--filter", "no-such-tag"]);
    assert_eq!(exit_code(&output), 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("known tags"));
}

#[test]
fn verify_rejects_malformed_thread_cap() {
    let output = bin()
        .args(["verify", "--filter", "cli"])
        .env("DICHOTOMY_LAB_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("DICHOTOMY_LAB_THREADS"));
}

#[test]
fn plot_extracts_tables_and_flags_missing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(&spec, "problem = \"scalar-tanh\"\n");
    let report = dir.path().join("report.json");
    let output = run(&["analyze", spec.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(exit_code(&output), 0);

    // Kernel profile: n plus one column per kernel entry (scalar problem:
    // two columns), and the peak sits at the coefficient sign flip n = 0.
    let output = run(&["plot", report.to_str().unwrap(), "--what", "kernel-profile"]);
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let rows: Vec<Vec<f64>> = stdout
        .lines()
        .filter(|line| !line.starts_with('#'))
        .map(|line| {
            line.split_whitespace()
                .map(|v| v.parse().unwrap())
                .collect()
        })
        .collect();
    assert_eq!(rows.len(), 41, "window 20 grid");
    assert!(rows.iter().all(|row| row.len() == 2));
    let peak = rows
        .iter()
        .max_by(|a, b| a[1].abs().partial_cmp(&b[1].abs()).unwrap())
        .unwrap();
    assert_eq!(peak[0], 0.0);

    // Decay table: three columns, norm below envelope.
    let output = run(&["plot", report.to_str().unwrap(), "--what", "dichotomy-decay"]);
    assert_eq!(exit_code(&output), 0);
    for line in String::from_utf8(output.stdout).unwrap().lines() {
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(cols.len(), 3);
        assert!(cols[1] <= cols[2] + 1e-9, "norm exceeds envelope: {line}");
    }

    // Eigenvalue path: crossing visible as a sign change around t = 0.
    let output = run(&["plot", report.to_str().unwrap(), "--what", "eigenvalue-path"]);
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let path: Vec<(f64, f64)> = stdout
        .lines()
        .filter(|line| !line.starts_with('#'))
        .map(|line| {
            let cols: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse().unwrap())
                .collect();
            (cols[0], cols[1])
        })
        .collect();
    assert!(path.first().unwrap().1 > 0.0);
    assert!(path.last().unwrap().1 < 0.0);

    // A pair fixture's report has no dynamics stages at all.
    let pair_spec = dir.path().join("pair.toml");
    write(&pair_spec, "problem = \"block-pair\"\n");
    let pair_report = dir.path().join("pair.json");
    let output = run(&[
        "analyze",
        pair_spec.to_str().unwrap(),
        "--out",
        pair_report.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 0);
    let output = run(&["plot", pair_report.to_str().unwrap(), "--what", "eigenvalue-path"]);
    assert_eq!(exit_code(&output), 2);
    assert!(String::from_utf8_lossy(&output.stderr).contains("flow"));
}

#[test]
fn plot_writes_to_file_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(&spec, "problem = \"scalar-tanh\"\n");
    let report = dir.path().join("report.json");
    run(&["analyze", spec.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    let table = dir.path().join("kernel.dat");
    let output = run(&[
        "plot",
        report.to_str().unwrap(),
        "--what",
        "kernel-profile",
        "--out",
        table.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&output), 0);
    assert!(output.stdout.is_empty());
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("# scalar-tanh"));
}

#[test]
fn list_problems_covers_the_registry() {
    let output = run(&["list-problems"]);
    assert_eq!(exit_code(&output), 0);
    let stdout = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 14);
    for name in ["scalar-tanh", "petrovskij-k8", "hill-elliptic", "commensurable-pair"] {
        assert!(stdout.contains(name), "registry listing misses {name}");
    }
}
