use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn curvop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvop"))
        .args(args)
        .output()
        .expect("run curvop")
}

fn problem(model: &str) -> Vec<String> {
    vec![
        "--model".into(),
        fixture(model).display().to_string(),
        "--params".into(),
        fixture("tiny_params.json").display().to_string(),
        "--data".into(),
        fixture("tiny_data.json").display().to_string(),
    ]
}

fn run(cmd: &str, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(problem("tiny_model.json"));
    args.extend(extra.iter().map(|s| s.to_string()));
    curvop(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn ok_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(v["error"].is_string());
    assert!(v["context"].is_object());
    v
}

#[test]
fn trace_is_byte_identical_across_runs() {
    let args = [
        "--curvature",
        "ggn",
        "--budget",
        "60",
        "--estimator",
        "xtrace",
        "--seed",
        "7",
    ];
    let a = run("trace", &args);
    let b = run("trace", &args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v = ok_json(&a);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["budget"], 60);
}

#[test]
fn materialized_hessian_matches_golden() {
    let got = ok_json(&run("materialize", &["--curvature", "hessian"]));
    let golden: Value = serde_json::from_str(
        &std::fs::read_to_string(fixture("tiny_hessian_golden.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(got["dim"], 10);
    let rows = |v: &Value| -> Vec<Vec<f64>> {
        v["matrix"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| {
                r.as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .collect()
            })
            .collect()
    };
    let (g, w) = (rows(&got), rows(&golden));
    assert_eq!(g.len(), 10);
    for (gr, wr) in g.iter().zip(&w) {
        for (a, b) in gr.iter().zip(wr) {
            assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn noise_fixture_fails_the_determinism_check() {
    let mut args: Vec<String> = vec!["check-deterministic".into()];
    args.extend(problem("noise_model.json"));
    let out = curvop(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
    assert_eq!(report["first_mismatch"], "risk value");
    let err = error_json(&out);
    assert!(err["error"].as_str().unwrap().contains("risk value"));
}

#[test]
fn clean_fixture_passes_the_determinism_check() {
    let v = ok_json(&run("check-deterministic", &["--batch-size", "4"]));
    assert_eq!(v["passed"], true);
}

#[test]
fn malformed_input_names_path_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("params.json");
    std::fs::write(
        &bad,
        r#"{"params": [[[0.7], [-1.1], [0.4]], [0.1, "x", 0.3], [[0.9, -0.6, 1.2]], [-0.05]]}"#,
    )
    .unwrap();
    let out = curvop(&[
        "matvec",
        "--model",
        fixture("tiny_model.json").to_str().unwrap(),
        "--params",
        bad.to_str().unwrap(),
        "--data",
        fixture("tiny_data.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["context"]["kind"], "parse");
    assert_eq!(e["context"]["path"], bad.display().to_string());
    assert!(e["context"]["field"]
        .as_str()
        .unwrap()
        .starts_with("params[1]"));
}

#[test]
fn incompatible_flags_are_usage_errors() {
    for args in [
        vec!["--curvature", "ggn", "--kfac-flavor", "mc"],
        vec!["--curvature", "hessian", "--samples", "3"],
    ] {
        let out = run("matvec", &args);
        assert_eq!(out.status.code(), Some(2));
        assert_eq!(error_json(&out)["context"]["kind"], "usage");
    }
    let out = run(
        "influence",
        &["--curvature", "kfac", "--datum", "0", "--damping", "1"],
    );
    assert_eq!(error_json(&out)["context"]["kind"], "usage");
    let out = run("trace", &["--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["context"]["kind"], "usage");
}

#[test]
fn out_file_replaces_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diag.json");
    let out = run(
        "diag",
        &["--estimator", "exact", "--out", path.to_str().unwrap()],
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let direct = run("diag", &["--estimator", "exact"]);
    assert_eq!(std::fs::read(&path).unwrap(), direct.stdout);
}

#[test]
fn spectrum_writes_csv_and_svg_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("density.csv");
    let args = [
        "--runs",
        "3",
        "--steps",
        "6",
        "--seed",
        "2",
        "--out",
        csv.to_str().unwrap(),
    ];
    assert!(run("spectrum", &args).status.success());
    let first = (
        std::fs::read(&csv).unwrap(),
        std::fs::read(csv.with_extension("svg")).unwrap(),
    );
    assert!(run("spectrum", &args).status.success());
    assert_eq!(first.0, std::fs::read(&csv).unwrap());
    assert_eq!(first.1, std::fs::read(csv.with_extension("svg")).unwrap());
    let text = String::from_utf8(first.0).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("grid,density"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 1024);
    let mass: f64 = rows
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    assert!((mass - 1.0).abs() <= 1e-3);
    assert!(String::from_utf8(first.1).unwrap().starts_with("<svg"));
}

#[test]
fn seeded_commands_reproduce() {
    let cases: [(&str, &[&str]); 10] = [
        (
            "matvec",
            &["--curvature", "mc-fisher", "--samples", "4", "--seed", "3"],
        ),
        (
            "diag",
            &["--estimator", "hutchinson", "--budget", "5", "--seed", "3"],
        ),
        ("frobenius", &["--budget", "5", "--seed", "3"]),
        ("eigs", &["--k", "3", "--seed", "3"]),
        (
            "newton",
            &[
                "--curvature",
                "kfac",
                "--kfac-flavor",
                "mc",
                "--damping",
                "0.1",
                "--seed",
                "3",
            ],
        ),
        (
            "influence",
            &["--curvature", "ggn", "--datum", "1", "--damping", "0.5"],
        ),
        (
            "prune",
            &[
                "--curvature",
                "ggn",
                "--mode",
                "full",
                "--damping",
                "0.5",
                "--indices",
                "0,4",
            ],
        ),
        ("overlap", &["--k", "2", "--seed", "3"]),
        (
            "trace",
            &[
                "--estimator",
                "hutchpp",
                "--budget",
                "9",
                "--seed",
                "3",
                "--batch-size",
                "4",
                "--shuffle",
            ],
        ),
        (
            "spectrum",
            &["--runs", "2", "--steps", "5", "--seed", "3", "--log"],
        ),
    ];
    for (cmd, args) in cases {
        let a = run(cmd, args);
        assert!(
            a.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&a.stderr)
        );
        assert_eq!(a.stdout, run(cmd, args).stdout, "{cmd}");
    }
}

#[test]
fn merge_writes_a_loadable_parameter_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("merged.json");
    let p = fixture("tiny_params.json");
    let out = curvop(&[
        "merge",
        "--model",
        fixture("tiny_model.json").to_str().unwrap(),
        "--params",
        p.to_str().unwrap(),
        p.to_str().unwrap(),
        "--data",
        fixture("tiny_data.json").to_str().unwrap(),
        "--damping",
        "1e-9",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let merged: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(merged["tasks"], 2);
    let again = curvop(&[
        "matvec",
        "--model",
        fixture("tiny_model.json").to_str().unwrap(),
        "--params",
        out_path.to_str().unwrap(),
        "--data",
        fixture("tiny_data.json").to_str().unwrap(),
    ]);
    assert!(again.status.success());
}

#[test]
fn bench_reports_gradient_row_one() {
    let v = ok_json(&run(
        "bench",
        &["--repeats", "3", "--curvatures", "ggn,kfac"],
    ));
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows[0]["name"], "gradient");
    assert_eq!(rows[0]["relative"], 1.0);
    assert_eq!(rows.len(), 3);
    let out = run("bench", &["--repeats", "2"]);
    assert_eq!(error_json(&out)["context"]["kind"], "contract");
}
