use std::process::{Command, Output};

fn svq(args: &[&str], dir: &std::path::Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svq"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn small_run_config(dir: &std::path::Path, placement: &str) -> std::path::PathBuf {
    let path = dir.join(format!("run_{placement}.json"));
    std::fs::write(
        &path,
        format!(
            r#"{{"dataset": {{"kind": "synthetic", "length": 700, "period": 12, "noise": 0.1, "channels": 1, "seed": 1}},
                "stride": 4,
                "model": {{"input_length": 24, "horizon": 8, "patch_length": 8, "patch_stride": 8, "d_model": 8,
                           "n_heads": 2, "codebook_size": 16, "vq_placement": "{placement}"}},
                "train": {{"epochs": 2, "batch_size": 16, "lr": 0.001}}}}"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn covering_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = svq(
        &[
            "covering",
            "--n",
            "16",
            "--codebook",
            "64",
            "--t",
            "4",
            "--trials",
            "1000",
            "--seed",
            "7",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["ratio"].as_f64().unwrap() < 1.0);
}

#[test]
fn config_and_usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = svq(&["train", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    assert_eq!(
        svq(&["train", "--no-such-flag"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(svq(&["frobnicate"], dir.path()).status.code(), Some(1));
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"model": {"d_model": 10, "n_heads": 4}}"#,
    )
    .unwrap();
    assert_eq!(
        svq(&["train", "--config", "bad.json"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        svq(&["covering", "--trials", "5"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(svq(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn params_prints_reduction_table() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("twin.json"),
        r#"{"model": {"d_model": 32, "d_ff": 64}}"#,
    )
    .unwrap();
    let out = svq(&["params", "--config", "twin.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("horizon,params_with,params_without,ffn_count,reduction_pct")
    );
    assert_eq!(lines.count(), 4);
}

#[test]
fn train_eval_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path(), "post_encoder");
    let cfg = cfg.to_str().unwrap();
    let out = svq(
        &["train", "--config", cfg, "--out-dir", "runs", "--seed", "3"],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let run_dir = dir.path().join(summary["run_dir"].as_str().unwrap());
    for f in [
        "config.json",
        "model.svqm",
        "history.csv",
        "results.csv",
        "summary.json",
    ] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let ckpt = run_dir.join("model.svqm");
    let ckpt = ckpt.to_str().unwrap();
    let out = svq(&["eval", "--config", cfg, "--checkpoint", ckpt], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(metrics["mse"], summary["test"]["mse"]);
    assert!(metrics["owa"].as_f64().is_some());

    let out = svq(
        &[
            "export-embeddings",
            "--config",
            cfg,
            "--checkpoint",
            ckpt,
            "--which",
            "post",
            "--out-dir",
            "runs",
        ],
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn post_quant_export_without_quantizer_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path(), "none");
    let cfg = cfg.to_str().unwrap();
    let out = svq(&["train", "--config", cfg, "--out-dir", "runs"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let ckpt = dir
        .path()
        .join(summary["run_dir"].as_str().unwrap())
        .join("model.svqm");
    let out = svq(
        &[
            "export-embeddings",
            "--config",
            cfg,
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--which",
            "post",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no quantizer"));
}

#[test]
fn fewshot_and_robustness_reject_mismatched_axis() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("ffn.json"),
        r#"{"axis": {"kind": "ffn", "values": [true]}}"#,
    )
    .unwrap();
    assert_eq!(
        svq(&["robustness", "--config", "ffn.json"], dir.path())
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        svq(&["fewshot", "--config", "ffn.json"], dir.path())
            .status
            .code(),
        Some(1)
    );
}
