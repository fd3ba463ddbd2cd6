//! End-to-end behaviour of the `eitga` binary.

use std::path::Path;
use std::process::{Command, Output};

fn eitga(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eitga"))
        .current_dir(dir)
        .args(args)
        .env_remove("EITGA_OUT")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = eitga(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    eitga(dir, args).status.code().unwrap()
}

fn values(p: &Path) -> Vec<f64> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.trim().parse().unwrap())
        .collect()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn mesh_reports_counts_and_validity() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["mesh"]);
    assert!(out.starts_with("nodes 313 elements 576 electrodes 16"), "{out}");
    assert!(out.contains("\nvalid"));
    let out = ok(dir.path(), &["mesh", "--rings", "4", "--out", "small.txt"]);
    assert!(out.contains("elements 64"));
    assert!(dir.path().join("small.txt").exists());
}

#[test]
fn invalid_mesh_parameters_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["mesh", "--rings", "1"]), 2);
    assert_eq!(code(dir.path(), &["mesh", "--electrodes", "7"]), 2);
}

#[test]
fn missing_and_malformed_inputs_exit_with_io_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["render", "--field", "nope.txt"]), 3);
    std::fs::write(dir.path().join("bad.txt"), "field n 3\n1.0\nx\n").unwrap();
    assert_eq!(code(dir.path(), &["render", "--field", "bad.txt"]), 3);
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nsead = 2\n").unwrap();
    let out = eitga(dir.path(), &["reconstruct", "--config", "bad.toml"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn reconstruct_without_measurements_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["reconstruct", "--solver", "nr"]), 2);
}

#[test]
fn simulate_writes_the_full_protocol_and_zero_noise_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--spec-out", "ref.spec"]);
    let out = ok(d, &["simulate", "--phantom", "ref.spec", "--noise", "0"]);
    assert!(out.contains("measurements 208"));
    let clean = std::fs::read(d.join("y_clean.dat")).unwrap();
    assert_eq!(clean, std::fs::read(d.join("y.dat")).unwrap());
    assert_eq!(values(&d.join("y_clean.dat")).len(), 208);
}

#[test]
fn noise_depends_on_the_seed_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--noise", "0.01", "--seed", "3", "--noisy-out", "a.dat"]);
    ok(d, &["simulate", "--noise", "0.01", "--seed", "3", "--noisy-out", "b.dat"]);
    ok(d, &["simulate", "--noise", "0.01", "--seed", "4", "--noisy-out", "c.dat"]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.dat"), read("b.dat"));
    assert_ne!(read("a.dat"), read("c.dat"));
    let (clean, noisy) = (values(&d.join("y_clean.dat")), values(&d.join("a.dat")));
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let diff: Vec<f64> = clean.iter().zip(&noisy).map(|(a, b)| a - b).collect();
    let ratio = rms(&diff) / rms(&clean);
    assert!((0.007..0.013).contains(&ratio), "noise ratio {ratio}");
}

#[test]
fn phantom_field_has_the_anomaly() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["phantom", "--preset", "two-anomaly", "--svg", "p.svg"]);
    assert!(out.starts_with("elements 576 anomalous "));
    let field = values(&dir.path().join("phantom_field.txt"));
    assert_eq!(field.len(), 576);
    assert!(field.iter().any(|&v| v != 1.0));
    assert!(std::fs::read_to_string(dir.path().join("p.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn hybrid_run_writes_a_stage_marked_trace() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--rings", "8", "--noise", "0.01"]);
    let out = ok(
        d,
        &[
            "reconstruct", "--rings", "8", "--measurements", "y.dat", "--solver", "hybrid", "--disturb", "0.2",
            "--population", "20", "--generations", "5", "--out-dir", "h",
        ],
    );
    assert!(out.contains("solver hybrid"));
    let trace = std::fs::read_to_string(d.join("h/trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("stage,generation,best_fitness,mean_fitness,forward_solves,elapsed_ms"));
    let stages: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    let first_ga = stages.iter().position(|&s| s == "ga").unwrap();
    assert!(stages[0] == "nr" && stages[first_ga - 1] == "disturb");
    assert_eq!(stages.len() - first_ga, 6);
    let summary = json(&d.join("h/result.json"));
    assert_eq!(summary["schema"], "eitga-run/1");
    let kinds: Vec<&str> = summary["stages"].as_array().unwrap().iter().map(|s| s["stage"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["nr", "disturb", "ga"]);
    for f in ["estimate.txt", "estimate.svg"] {
        assert!(d.join("h").join(f).exists());
    }
}

#[test]
fn zero_generations_evaluate_the_initial_population_only() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--rings", "4", "--noise", "0.01"]);
    ok(
        d,
        &["reconstruct", "--rings", "4", "--measurements", "y.dat", "--generations", "0", "--population", "12", "--out-dir", "g"],
    );
    let s = json(&d.join("g/result.json"));
    assert_eq!(s["forward_solves"], 12);
    assert_eq!(s["trace_rows"], 1);
    assert_eq!(s["jacobians"], 0);
    assert_eq!(s["termination"], "budget");
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--rings", "4", "--noise", "0.01"]);
    std::fs::write(
        d.join("run.toml"),
        "measurements = \"y.dat\"\n[mesh]\nrings = 4\n[ga]\npopulation_size = 10\nmax_generations = 3\n",
    )
    .unwrap();
    ok(d, &["reconstruct", "--config", "run.toml", "--out-dir", "a"]);
    ok(d, &["reconstruct", "--config", "run.toml", "--generations", "1", "--out-dir", "b"]);
    assert_eq!(json(&d.join("a/result.json"))["config"]["ga"]["max_generations"], 3);
    assert_eq!(json(&d.join("b/result.json"))["config"]["ga"]["max_generations"], 1);
    assert_eq!(json(&d.join("b/result.json"))["trace_rows"], 2);
}

#[test]
fn compare_tabulates_runs_and_checks_their_traces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--rings", "6", "--electrodes", "8", "--noise", "0.01"]);
    let run = |solver: &str, out: &str| {
        ok(
            d,
            &[
                "reconstruct", "--rings", "6", "--electrodes", "8", "--measurements", "y.dat", "--solver", solver,
                "--population", "16", "--generations", "4", "--out-dir", out,
            ],
        )
    };
    run("ga", "ga");
    run("nr", "nr");
    let table = ok(d, &["compare", "ga", "nr", "ga"]);
    assert_eq!(table.lines().count(), 4);
    let report = json(&d.join("compare.json"));
    assert_eq!(report["schema"], "eitga-compare/1");
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows[0], rows[2]);
    assert_eq!(rows[0]["jacobians"], 0);
    for r in rows {
        assert_eq!(r["forward_solves"], r["trace_forward_solves"]);
    }

    // a trace that disagrees with its summary is refused
    let trace = std::fs::read_to_string(d.join("nr/trace.csv")).unwrap();
    let mut lines: Vec<&str> = trace.lines().collect();
    lines.pop();
    std::fs::write(d.join("nr/trace.csv"), lines.join("\n") + "\n").unwrap();
    assert_eq!(code(d, &["compare", "ga", "nr"]), 2);
    assert_eq!(code(d, &["compare", "ga", "missing"]), 3);
}

#[test]
fn out_root_redirects_relative_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("outputs");
    let out = Command::new(env!("CARGO_BIN_EXE_eitga"))
        .current_dir(dir.path())
        .args(["mesh", "--rings", "4"])
        .env("EITGA_OUT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("mesh.txt").exists());
    assert!(!dir.path().join("mesh.txt").exists());
}

#[test]
fn render_accepts_a_fixed_range() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["phantom", "--rings", "4"]);
    ok(d, &["render", "--rings", "4", "--field", "phantom_field.txt", "--range", "0", "3", "--title", "t"]);
    let svg = std::fs::read_to_string(d.join("field.svg")).unwrap();
    assert_eq!(svg.matches("<polygon").count(), 64);
    assert!(svg.contains(">0.0000<") && svg.contains(">3.0000<"));
    assert_eq!(code(d, &["render", "--rings", "4", "--field", "phantom_field.txt", "--range", "3", "0"]), 2);
}
