use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn apd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apd"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn apd")
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn small_lad(dir: &Path) {
    let out = apd(
        &[
            "generate", "lad", "--m", "20", "--n", "10", "--s", "2", "--seed", "3", "--out",
            "lad.json",
        ],
        dir,
    );
    assert!(out.status.success());
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let out = apd(
            &[
                "generate",
                "lad",
                "--seed",
                "9",
                "--out",
                name,
                "--truth",
                "truth.json",
            ],
            dir.path(),
        );
        let v = json_stdout(&out);
        assert_eq!(v["rows"], 60);
        assert_eq!(v["dim"], 90);
        assert!(v["kappa"].as_f64().unwrap() > 0.0);
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    let b = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(a, b);
    let truth: Vec<f64> =
        serde_json::from_slice(&std::fs::read(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth.len(), 30);
    assert_eq!(truth.iter().filter(|v| **v != 0.0).count(), 6);
}

#[test]
fn quadratic_flow_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = apd(
        &[
            "generate",
            "quadratic",
            "--n",
            "4",
            "--seed",
            "2",
            "--out",
            "q.json",
            "--reference",
            "q_ref.json",
        ],
        dir.path(),
    );
    json_stdout(&out);
    let args = [
        "flow",
        "--instance",
        "q.json",
        "--t-end",
        "2",
        "--record-every",
        "100",
        "--out",
        "f.csv",
    ];
    let v = json_stdout(&apd(&args, dir.path()));
    assert_eq!(v["rows"], 11);
    let csv = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "step,objective_gap,primal_residual,lyapunov_E,lyapunov_H,sigma"
    );
    // an explicit reference file is accepted too
    let mut with_ref = args.to_vec();
    with_ref.extend(["--reference", "q_ref.json"]);
    json_stdout(&apd(&with_ref, dir.path()));
}

#[test]
fn solve_fit_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    small_lad(dir.path());
    let v = json_stdout(&apd(
        &[
            "solve",
            "--instance",
            "lad.json",
            "--max-iter",
            "100",
            "--out",
            "apd.csv",
        ],
        dir.path(),
    ));
    assert_eq!(v["algorithm"], "apd");
    assert_eq!(v["iterations"], 100);
    assert!(v["max_dual_identity_error"].as_f64().unwrap() <= 1e-10);
    let v = json_stdout(&apd(
        &[
            "solve",
            "--algo",
            "lpmm",
            "--instance",
            "lad.json",
            "--max-iter",
            "500",
            "--out",
            "lpmm.csv",
        ],
        dir.path(),
    ));
    assert_eq!(v["iterations"], 500);

    let out = apd(
        &["compare", "--history", "apd.csv", "--history", "lpmm.csv"],
        dir.path(),
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("history,rows,"));
    assert!(lines[2].starts_with("lpmm.csv,"));

    // no reference, so no gap column to fit
    let out = apd(&["fit", "--history", "lpmm.csv"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn analyze_reports_rate() {
    let dir = tempfile::tempdir().unwrap();
    let v = json_stdout(&apd(
        &[
            "analyze", "--alpha", "3", "--rho", "2", "--gamma", "2", "--kappa", "1",
        ],
        dir.path(),
    ));
    assert!((v["rate"].as_f64().unwrap() - 1.5).abs() < 1e-15);
    assert!((v["theta"].as_f64().unwrap() - 1.5).abs() < 1e-15);
    assert_eq!(v["kappa"], 1.0);
    assert!(v["case"].is_string());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    small_lad(dir.path());
    // validation: bad parameter, single-block problem, unknown config key
    let out = apd(
        &[
            "analyze", "--alpha", "0", "--rho", "2", "--gamma", "2", "--kappa", "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    apd(
        &["generate", "quadratic", "--n", "3", "--out", "q.json"],
        dir.path(),
    );
    assert_eq!(
        apd(&["solve", "--instance", "q.json"], dir.path())
            .status
            .code(),
        Some(2)
    );
    std::fs::write(dir.path().join("bad.toml"), "[instance]\nseeed = 1\n").unwrap();
    let out = apd(&["run", "--config", "bad.toml", "--out", "exp"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // divergence: small rho, fixed penalty
    let out = apd(
        &[
            "solve",
            "--instance",
            "lad.json",
            "--rho",
            "0.5",
            "--no-penalty",
            "--out",
            "div.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn run_with_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("exp.toml"),
        "[instance]\nkind = \"quadratic\"\nn = 3\nseed = 1\n[grid]\nalgorithms = []\n",
    )
    .unwrap();
    let v = json_stdout(&apd(
        &["run", "--config", "exp.toml", "--out", "exp"],
        dir.path(),
    ));
    assert_eq!(v["cells"], 0);
    assert!(dir.path().join("exp/report.json").exists());
}
