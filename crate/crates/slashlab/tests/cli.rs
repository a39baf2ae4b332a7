//! End-to-end checks of the `slashlab` binary: exit codes, artifacts,
//! and byte-level reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn slashlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slashlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("experiment.json");
    let config = serde_json::json!({
        "data": { "k": 2, "n_in": 8, "d_x": 4 },
        "freqs": { "mode": "pulse", "m": 17 },
        "train": {
            "tau1": 500, "tau2": 500, "batch_size": 64,
            "seed": 3, "snapshot_every": 5
        },
        "slash": { "lags": [0, 1, 2, 3, 4], "kappa": 0.1 }
    });
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn train_writes_artifacts_and_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out in [&out_a, &out_b] {
        let run = slashlab(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(
            run.status.code(),
            Some(0),
            "stderr: {}",
            String::from_utf8_lossy(&run.stderr)
        );
        for artifact in ["trajectory.csv", "params.sdha", "params.sdha.json", "summary.json"] {
            assert!(out.join(artifact).exists(), "missing {artifact}");
        }
    }
    for artifact in ["trajectory.csv", "params.sdha", "params.sdha.json", "summary.json"] {
        let a = std::fs::read(out_a.join(artifact)).unwrap();
        let b = std::fs::read(out_b.join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["passed"], serde_json::Value::Bool(true));
    assert!(summary["final"]["min_prev_score"].as_f64().unwrap() > 0.7);
    assert_eq!(summary["config"]["version"], env!("CARGO_PKG_VERSION"));
}

#[test]
fn train_rejects_invalid_field_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let config = serde_json::json!({
        "data": { "k": 2, "n_in": 8, "d_x": 4 },
        "freqs": { "mode": "pulse", "m": 17 },
        "train": { "eta1": -1.0 }
    });
    std::fs::write(&path, config.to_string()).unwrap();
    let run = slashlab(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("eta1"), "stderr must name the field: {stderr}");
}

#[test]
fn analyze_missing_file_exits_2() {
    let run = slashlab(&["analyze", "--dump", "/nonexistent/nope.sdha"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn check_freq_exit_codes() {
    let run = slashlab(&["check-freq", "--mode", "pulse", "--m", "130", "--horizon", "129"]);
    assert_eq!(run.status.code(), Some(0), "pulse family must pass");
    let stdout = String::from_utf8_lossy(&run.stdout);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["result"]["passed"], serde_json::Value::Bool(true));
    assert!(report["result"]["eps_fn"].as_f64().unwrap() <= 1e-9);

    let run = slashlab(&["check-freq", "--mode", "classic", "--d", "32", "--horizon", "100"]);
    assert_eq!(run.status.code(), Some(3), "classic band must fail the check");

    let run = slashlab(&["check-freq", "--mode", "pulse", "--m", "5", "--horizon", "0"]);
    assert_eq!(run.status.code(), Some(1), "zero horizon is a usage error");
}

#[test]
fn gradcheck_defaults_pass() {
    let run = slashlab(&["gradcheck"]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&run.stdout)).unwrap();
    assert!(report["max_relative_error_w1"].as_f64().unwrap() <= 1e-5);
    assert!(report["max_relative_error_w2"].as_f64().unwrap() <= 1e-5);
}

#[test]
fn ablate_trained_params_reports_cone_band_drop() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    let run = slashlab(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));

    let params = out.join("params.sdha");
    let run = slashlab(&["ablate", "--params", params.to_str().unwrap(), "--band", "cone"]);
    assert_eq!(
        run.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&run.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&run.stdout)).unwrap();
    let ratio = report["report"]["ratios"][1].as_f64().unwrap();
    assert!(ratio < 0.9, "removing the cone band must hurt lag 1, got {ratio}");

    let run = slashlab(&["ablate", "--params", params.to_str().unwrap(), "--band", "none"]);
    let report: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&run.stdout)).unwrap();
    let ratio = report["report"]["ratios"][1].as_f64().unwrap();
    assert_eq!(ratio, 1.0, "empty removal set leaves scores unchanged");
}

#[test]
fn analyze_writes_reports_per_format() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = dir.path().join("out");
    assert_eq!(
        slashlab(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    // the params dump has no Q/K or H tensors: analyze must say so
    let run = slashlab(&[
        "analyze",
        "--dump",
        out.join("params.sdha").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("missing tensor"), "stderr: {stderr}");
}

#[test]
fn unknown_arguments_are_usage_errors() {
    let run = slashlab(&["train", "--definitely-not-a-flag"]);
    assert_eq!(run.status.code(), Some(1));
    let run = slashlab(&["no-such-command"]);
    assert_eq!(run.status.code(), Some(1));
}
