use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use kgcrf::{write_tensor, EngineConfig, Grid2D};
use kgcrf_cli::config_digest;

fn kgcrf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgcrf"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn manifest(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn phantom(dir: &Path) {
    let out = kgcrf(
        &["phantom", "--template", "two_organ_lr", "--size", "40", "--seed", "2",
          "--corruption-kind", "fragment_swap", "--corruption-magnitude", "0.05", "--out-dir", "ph"],
        dir,
    );
    let m = manifest(&out);
    assert_eq!(m["command"], "phantom");
    assert_eq!(m["outputs"].as_array().unwrap().len(), 7);
}

#[test]
fn phantom_refine_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    let m = manifest(&kgcrf(
        &["refine", "--prob", "ph/corrupted_prob.npy", "--features", "ph/features.npy",
          "--graph", "ph/graph.json", "--landmarks", "ph/landmarks.json", "--out-dir", "r"],
        d,
    ));
    assert_eq!(m["config_digest"], config_digest(&EngineConfig::default()));
    assert_eq!(m["metrics"]["converged"], true);
    assert!(m["metrics"]["energy_refined"].as_f64() <= m["metrics"]["energy_initial"].as_f64());
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
    let sidecar: Value = serde_json::from_str(&std::fs::read_to_string(d.join("r/uncertainty.json")).unwrap()).unwrap();
    assert_eq!(sidecar["lambda_a"], 0.3);

    let before = manifest(&kgcrf(&["eval", "--pred", "ph/truth.npy", "--truth", "ph/truth.npy"], d));
    assert_eq!(before["metrics"]["mean_dice"], 1.0);
    let after = manifest(&kgcrf(&["eval", "--pred", "r/labels.npy", "--truth", "ph/truth.npy"], d));
    assert!(after["metrics"]["mean_dice"].as_f64().unwrap() > 0.95);
}

#[test]
fn fuse_records_beta_and_picks_confident_level() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let a = Grid2D::from_fn(4, 4, 2, |_, _, c| if c == 0 { 0.8 } else { 0.2 });
    let b = Grid2D::from_fn(2, 2, 2, |_, _, c| if c == 0 { 0.3 } else { 0.7 });
    write_tensor(&a, d.join("a.npy")).unwrap();
    write_tensor(&b, d.join("b.npy")).unwrap();
    write_tensor(&Grid2D::filled(4, 4, 1, 0.0), d.join("ua.npy")).unwrap();
    write_tensor(&Grid2D::filled(2, 2, 1, 5.0), d.join("ub.npy")).unwrap();
    let m = manifest(&kgcrf(
        &["fuse", "--levels", "a.npy", "b.npy", "--uncertainties", "ua.npy", "ub.npy", "--beta", "1000", "--out-dir", "f"],
        d,
    ));
    assert_eq!(m["metrics"]["beta"], 1000.0);
    let fused = kgcrf::read_tensor(d.join("f/fused.npy")).unwrap();
    assert!(fused.max_abs_diff(&a).unwrap() < 1e-12);
    assert_eq!(kgcrf::read_tensor(d.join("f/weights.npy")).unwrap().shape(), (4, 4, 2));

    let defaults = manifest(&kgcrf(&["fuse", "--levels", "a.npy", "--uncertainties", "ua.npy", "--out-dir", "g"], d));
    assert_eq!(defaults["metrics"]["beta"], 1.0);
}

#[test]
fn oracle_reports_gap_and_rejects_large_instances() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = Grid2D::from_fn(2, 3, 2, |r, c, l| if (r + c + l) % 2 == 0 { 0.7 } else { 0.3 });
    write_tensor(&p, d.join("p.npy")).unwrap();
    write_tensor(&Grid2D::from_fn(2, 3, 1, |r, c, _| (r * 3 + c) as f64), d.join("f.npy")).unwrap();
    let m = manifest(&kgcrf(&["oracle", "--prob", "p.npy", "--features", "f.npy", "--out-dir", "o"], d));
    assert!(m["metrics"]["max_abs_gap"].as_f64().unwrap() <= 0.05);
    assert!(d.join("o/exact_marginals.npy").exists());

    write_tensor(&Grid2D::filled(5, 5, 2, 0.5), d.join("big.npy")).unwrap();
    write_tensor(&Grid2D::filled(5, 5, 1, 0.0), d.join("bigf.npy")).unwrap();
    assert_eq!(kgcrf(&["oracle", "--prob", "big.npy", "--features", "bigf.npy"], d).status.code(), Some(2));
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    phantom(d);
    let small = kgcrf(&["phantom", "--template", "two_organ_lr", "--size", "16", "--out-dir", "x"], d);
    assert_eq!(small.status.code(), Some(2));
    assert!(small.stdout.is_empty());
    let unknown = kgcrf(&["phantom", "--template", "heart", "--size", "40", "--out-dir", "x"], d);
    assert_eq!(unknown.status.code(), Some(2));
    let missing = kgcrf(&["refine", "--prob", "nope.npy", "--features", "ph/features.npy", "--graph", "ph/graph.json", "--out-dir", "x"], d);
    assert_eq!(missing.status.code(), Some(3));

    write_tensor(&Grid2D::filled(8, 8, 1, 0.0), d.join("f8.npy")).unwrap();
    let mismatch = kgcrf(&["refine", "--prob", "ph/corrupted_prob.npy", "--features", "f8.npy", "--graph", "ph/graph.json", "--out-dir", "x"], d);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("40x40"));

    std::fs::write(d.join("bad.json"), r#"{"lambda_f": -1.0}"#).unwrap();
    let bad_cfg = kgcrf(&["refine", "--prob", "ph/corrupted_prob.npy", "--features", "ph/features.npy", "--graph", "ph/graph.json", "--config", "bad.json", "--out-dir", "x"], d);
    assert_eq!(bad_cfg.status.code(), Some(2));

    let bad_beta = kgcrf(&["fuse", "--levels", "ph/clean_prob.npy", "--uncertainties", "ph/clean_prob.npy", "--beta", "0", "--out-dir", "x"], d);
    assert_eq!(bad_beta.status.code(), Some(2));
}
