//! CLI surface tests: exit codes, help, init-demo artifacts, eval output.
//! Training-heavy paths are covered by the core acceptance suite; here the
//! configs are shrunk to seconds.

use std::path::Path;
use std::process::Command;

fn prkd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prkd"))
}

/// Tiny config over a synthetic dataset written into `dir`.
fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let images = dir.join("imgs.idx");
    let labels = dir.join("lbls.idx");
    if !images.exists() {
        // 16x16 synthetic IDX pair via the library
        let (i, l) = prkd_core::data::synthesize_idx(dir, 24, 16, 16, 0).unwrap();
        std::fs::rename(i, &images).unwrap();
        std::fs::rename(l, &labels).unwrap();
    }
    let cfg = serde_json::json!({
        "mode": "e2e-baseline",
        "seed": 0,
        "encoding": "amplitude-object",
        "dataset": {
            "source": {"kind": "idx-files", "images": images, "labels": labels},
            "target_size": [16, 16],
            "split_counts": [12, 6, 6],
            "subset_seed": 0
        },
        "network": {"depth": 2, "base_channels": 3},
        "snapshots": 1,
        "initializer": {"kernel_size": 3, "iterations": 4, "trainable": true},
        "loss": {"alpha": 1.0, "beta": 0.0, "rho": 0.01, "reg_levels": 4},
        "optimizer": {"learning_rate": 5e-4, "batch_size": 6, "epochs": 1, "grad_clip_norm": 1.0},
        "noise": {"kind": "none"}
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn help_exits_zero_everywhere() {
    let top = prkd().arg("--help").output().unwrap();
    assert!(top.status.success());
    for sub in [
        "train-teacher",
        "train-baseline",
        "train-random",
        "train-student",
        "eval",
        "sweep",
        "ablate",
        "init-demo",
        "reproduce",
    ] {
        let out = prkd().args([sub, "--help"]).output().unwrap();
        assert!(out.status.success(), "{sub} --help failed");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--out"), "{sub} help does not document --out");
    }
}

#[test]
fn unknown_flag_is_usage_error_exit_2() {
    let out = prkd().args(["train-baseline", "--foo"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.to_lowercase().contains("usage") || err.contains("--foo"));
}

#[test]
fn unknown_subcommand_is_usage_error_exit_2() {
    let out = prkd().arg("train-nothing").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_3_with_machine_parsable_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());

    // unknown override key
    let out = prkd()
        .args([
            "train-baseline",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "optimizer.epchs=2",
            "--out",
            dir.path().join("runs").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[config]"), "stderr: {err}");

    // invalid weight combination
    let out = prkd()
        .args([
            "train-baseline",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "loss.alpha=0.9",
            "--set",
            "loss.beta=0.3",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // explicitly setting sigma is rejected by the schema
    let out = prkd()
        .args([
            "train-baseline",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "loss.sigma=0.1",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_checkpoint_is_runtime_error_exit_4() {
    let out = prkd()
        .args(["eval", "--ckpt", "/nonexistent/x.prkd"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn train_eval_and_init_demo_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let runs = dir.path().join("runs");

    let out = prkd()
        .args([
            "train-baseline",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            runs.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let ckpt = std::fs::read_dir(&runs)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("checkpoint.prkd"))
        .find(|p| p.exists())
        .expect("a checkpoint was written");

    // mask export sits next to the checkpoint
    let run_dir = ckpt.parent().unwrap();
    assert!(run_dir.join("masks.bin").exists());
    assert!(run_dir.join("masks.json").exists());
    assert!(run_dir.join("trace.csv").exists());

    let eval_out = dir.path().join("eval");
    let out = prkd()
        .args([
            "eval",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--out",
            eval_out.to_str().unwrap(),
            "--split",
            "test",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(eval_out.join("metric_report.csv").exists());
    let text = std::fs::read_to_string(eval_out.join("metric_report.csv")).unwrap();
    assert!(text.starts_with("image_index,psnr_db,ssim"));
    assert_eq!(text.lines().count(), 7); // header + 6 test images

    let demo_out = dir.path().join("demo");
    let out = prkd()
        .args([
            "init-demo",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            demo_out.to_str().unwrap(),
            "--ckpt",
            ckpt.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "init-demo failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    // 2-channel f32 binary: 2 * 16 * 16 * 4 bytes
    let bin = std::fs::read(demo_out.join("init_estimate.bin")).unwrap();
    assert_eq!(bin.len(), 2 * 16 * 16 * 4);
    assert!(demo_out.join("init_estimate.png").exists());
    assert!(demo_out.join("init_estimate.json").exists());
}
