use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fairguide(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fairguide"))
        .args(args)
        .env("FAIRGUIDE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run_ok(args: &[&str]) -> String {
    let o = fairguide(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file named in the manifest exists and hashes to the recorded digest.
fn assert_manifest(dir: &Path) -> Value {
    use sha2::{Digest, Sha256};
    let m = read_json(&dir.join("manifest.json"));
    for (name, digest) in m["files"].as_object().unwrap() {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), digest.as_str().unwrap(), "{name}");
    }
    m
}

fn small_mixture_config() -> Value {
    json!({
        "version": 1,
        "seed": 5,
        "sampler": {"n_steps": 48, "t_min": 1e-3, "denoise_endpoint": true},
        "world": {"kind": "mixture", "preset": "strong_imbalance"},
        "classifier": {"train_size": 1500, "steps": 120, "batch": 128, "method": "wdp"},
        "sweep": {"n_per_w": 150, "seeding": "common"},
        "guidance": {"regime": "cg", "w_grid": [0, 1, 3, 5, 7, 9, 11, 13], "classifier": "clf/classifier.json"}
    })
}

#[test]
fn classifier_then_cg_sweep_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mix.json", &small_mixture_config());
    let clf_dir = tmp.path().join("clf");
    run_ok(&["train-classifier", "--config", s(&cfg), "--out", s(&clf_dir)]);
    let m = assert_manifest(&clf_dir);
    assert_eq!(m["command"], "train-classifier");
    assert!(m["details"]["mean_group_distance"].as_f64().unwrap() >= 0.0);

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["sweep", "--config", s(&cfg), "--out", s(&a)]);
    run_ok(&["sweep", "--config", s(&cfg), "--out", s(&b)]);
    let csv_a = std::fs::read(a.join("sweep.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("sweep.csv")).unwrap());
    let (ma, mb) = (assert_manifest(&a), assert_manifest(&b));
    assert_eq!(ma["config_sha256"], mb["config_sha256"]);
    assert_eq!(ma["files"], mb["files"]);

    // 8 scales x 2 groups plus the header
    assert_eq!(String::from_utf8(csv_a).unwrap().lines().count(), 17);
    let report = read_json(&a.join("bias_report.json"));
    for e in report["entries"].as_array().unwrap() {
        for g in 0..2 {
            let t = e["total_bias"][g].as_f64().unwrap();
            let parts = e["guidance_bias"][g].as_f64().unwrap() + e["model_bias"][g].as_f64().unwrap();
            assert_eq!(t, parts);
        }
    }

    // a different seed is a different experiment
    let c = tmp.path().join("c");
    run_ok(&["sweep", "--config", s(&cfg), "--out", s(&c), "--seed", "6"]);
    assert_ne!(assert_manifest(&c)["config_sha256"], ma["config_sha256"]);
}

#[test]
fn decompose_round_trips_a_stored_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = "w,group,ratio,ci_low,ci_high,total_bias,guidance_bias,model_bias\n\
               0,0,0.4,0.35,0.45,0,0,0\n0,1,0.6,0.55,0.65,0,0,0\n\
               5,0,0.3,0.25,0.35,0,0,0\n5,1,0.7,0.65,0.75,0,0,0\n\
               10,0,0.1,0.05,0.15,0,0,0\n10,1,0.9,0.85,0.95,0,0,0\n";
    let input = tmp.path().join("in.csv");
    std::fs::write(&input, csv).unwrap();
    let out = tmp.path().join("dec");
    run_ok(&["decompose", "--sweep", s(&input), "--target", "0.5,0.5", "--w-ref", "0", "--out", s(&out)]);
    assert_manifest(&out);
    let report = read_json(&out.join("bias_report.json"));
    let e = &report["entries"][2];
    assert_eq!(e["guidance_bias"][1].as_f64().unwrap(), 0.9 - 0.6);
    assert_eq!(e["model_bias"][1].as_f64().unwrap(), 0.6 - 0.5);
    for e in report["entries"].as_array().unwrap() {
        for g in 0..2 {
            let t = e["total_bias"][g].as_f64().unwrap();
            let r = e["ratio"][g].as_f64().unwrap();
            assert_eq!(t, e["guidance_bias"][g].as_f64().unwrap() + e["model_bias"][g].as_f64().unwrap());
            assert!((t - (r - 0.5)).abs() <= 1e-15);
        }
    }
    // decomposing the emitted table again reproduces it byte for byte
    let again = tmp.path().join("again");
    let emitted = out.join("sweep.csv");
    run_ok(&["decompose", "--sweep", s(&emitted), "--target", "0.5,0.5", "--w-ref", "0", "--out", s(&again)]);
    assert_eq!(std::fs::read(&emitted).unwrap(), std::fs::read(again.join("sweep.csv")).unwrap());
    assert_eq!(
        std::fs::read(out.join("bias_report.json")).unwrap(),
        std::fs::read(again.join("bias_report.json")).unwrap()
    );

    let o = fairguide(&["decompose", "--sweep", s(&input), "--target", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_exit_two_with_field_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cases = [
        (json!({"version": 1, "sweep": {"n_per_w": 200, "typo": 1}}), "sweep.typo"),
        (json!({"version": 1, "guidance": {"w_grid": [0, "x"]}}), "guidance.w_grid"),
        (
            json!({"version": 1, "world": {"kind": "embedding", "preset": "reference"},
                   "guidance": {"regime": "stayfair", "alpha": "auto"}}),
            "guidance.estimator",
        ),
        (
            json!({"version": 1, "world": {"kind": "embedding", "preset": "reference"},
                   "guidance": {"regime": "stayfair", "alpha": "auto", "estimator": "missing.json"}}),
            "guidance.estimator",
        ),
        (json!({"version": 1, "world": {"kind": "mixture", "preset": "strong_imbalance"}}), "guidance.classifier"),
        (json!({"version": 3}), "version"),
    ];
    for (i, (cfg, path)) in cases.iter().enumerate() {
        let p = write_config(tmp.path(), &format!("bad{i}.json"), cfg);
        let o = fairguide(&["sweep", "--config", s(&p), "--out", s(&out)]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{cfg}: {err}");
        assert!(err.contains(path), "{cfg}: {err}");
    }
    let o = fairguide(&["sweep", "--config", s(&tmp.path().join("nope.json")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    // the output path is an existing file, so creating the directory fails
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = write_config(
        tmp.path(),
        "theory.json",
        &json!({"version": 1, "theory": {"transfer_paths": 0, "transfer_steps": 16}}),
    );
    let o = fairguide(&["verify-theory", "--config", s(&cfg), "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_theory_reports_all_checks_passing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "theory.json",
        &json!({"version": 1, "seed": 2, "theory": {"transfer_paths": 4000, "transfer_steps": 256}}),
    );
    let out = tmp.path().join("t");
    run_ok(&["verify-theory", "--config", s(&cfg), "--out", s(&out)]);
    assert_manifest(&out);
    let r = read_json(&out.join("theory_report.json"));
    assert_eq!(r["passed"], true);
    let checks = r["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 2 + 6);
    assert!(checks.iter().all(|c| c["passed"] == true));
}

#[test]
fn alpha_pipeline_feeds_auto_shift() {
    let tmp = tempfile::tempdir().unwrap();
    let base = json!({
        "version": 1,
        "seed": 9,
        "sampler": {"n_steps": 48, "t_min": 1e-3, "denoise_endpoint": true},
        "world": {"kind": "embedding", "preset": "reference"},
        "alpha": {"family_size": 16, "direction_pairs": 8, "n_per_point": 150},
        "sweep": {"n_per_w": 150, "seeding": "common"},
        "guidance": {"regime": "stayfair", "alpha": "auto", "estimator": "alpha/estimator.json"}
    });
    let search_cfg = {
        let mut c = base.clone();
        c["guidance"] = json!({"regime": "stayfair"});
        write_config(tmp.path(), "search.json", &c)
    };
    let alpha_dir = tmp.path().join("alpha");
    run_ok(&["alpha-search", "--config", s(&search_cfg), "--out", s(&alpha_dir)]);
    let lines = std::fs::read_to_string(alpha_dir.join("alpha_records.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 16);
    assert!(assert_manifest(&alpha_dir)["details"]["direction_cosine"].as_f64().unwrap() > 0.9);

    run_ok(&["alpha-fit", "--config", s(&search_cfg), "--out", s(&alpha_dir)]);
    let m = assert_manifest(&alpha_dir);
    assert_eq!(m["command"], "alpha-fit");
    let est = read_json(&alpha_dir.join("estimator.json"));
    assert_eq!(est["direction"].as_array().unwrap().len(), 8);

    let sweep_cfg = write_config(tmp.path(), "sweep.json", &base);
    let out = tmp.path().join("sf");
    run_ok(&["sweep", "--config", s(&sweep_cfg), "--out", s(&out)]);
    let m = assert_manifest(&out);
    let alpha = m["details"]["alpha"].as_f64().unwrap();
    // the focus prompt leans toward group 1, so the shift is positive and on the grid
    assert!(alpha > 0.0 && (alpha / 2.5).fract() == 0.0, "alpha {alpha}");
}

#[test]
fn reproduce_runs_selected_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let stdout = run_ok(&["reproduce", "--criteria", "1,3,9", "--out", s(&out)]);
    assert_eq!(stdout.lines().filter(|l| l.contains(" PASS ")).count(), 3, "{stdout}");
    let report = std::fs::read_to_string(out.join("report.md")).unwrap();
    assert!(report.contains("3/3 passed"), "{report}");
    assert_manifest(&out);
    let o = fairguide(&["reproduce", "--criteria", "42", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut hashes = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            let out = run_ok(&["check", "--config", s(&p)]);
            assert_eq!(out.trim().len(), 64, "{}: {out}", p.display());
            hashes.push(out);
        }
    }
    assert_eq!(hashes.len(), 4);
    hashes.dedup();
    assert_eq!(hashes.len(), 4);
}
