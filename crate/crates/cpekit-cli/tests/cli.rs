//! End-to-end checks of the `cpekit` binary: exit codes, artifact layout,
//! and the design -> check round trip.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cpekit"));
    c.env_remove("CPEKIT_SEED");
    c
}

fn tmp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("cpekit_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn design_then_check_round_trip() {
    let dir = tmp_dir("roundtrip");
    let out = dir.join("design");
    let status = bin()
        .args(["design", "--mode", "mosaic", "-m", "2", "-L", "3"])
        .args(["--lengths", "4,5,5", "--seed", "11", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["manifest.json", "ledger.json", "result.json", "member_00.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert_eq!(read_json(&out.join("result.json"))["result"]["verdict"], true);

    let report = dir.join("check.json");
    let status = bin()
        .args(["check", "--mode", "mosaic", "-L", "3", "--bundle"])
        .arg(out.join("manifest.json"))
        .arg("-o")
        .arg(&report)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read_json(&report)["verdict"], true);
}

#[test]
fn seed_env_var_changes_design() {
    let dir = tmp_dir("seedenv");
    for (seed, name) in [("3", "a"), ("4", "b")] {
        let status = bin()
            .env("CPEKIT_SEED", seed)
            .args(["design", "--mode", "cumulative", "-m", "2", "-L", "3"])
            .args(["--lengths", "8", "-o"])
            .arg(dir.join(name))
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read_to_string(dir.join("a/member_00.csv")).unwrap();
    let b = std::fs::read_to_string(dir.join("b/member_00.csv")).unwrap();
    assert_ne!(a, b, "different seeds must give different signals");
}

#[test]
fn validation_errors_exit_2() {
    let dir = tmp_dir("validation");
    let status = bin()
        .args(["design", "--mode", "nonsense", "-m", "2", "-L", "3", "--lengths", "4", "-o"])
        .arg(dir.join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let status = bin()
        .args(["check", "--mode", "mosaic", "-L", "3", "--bundle"])
        .arg(dir.join("missing/manifest.json"))
        .arg("-o")
        .arg(dir.join("r.json"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn computational_failure_exits_1_with_diagnostic() {
    let dir = tmp_dir("compfail");
    let design = dir.join("design");
    assert!(bin()
        .args(["design", "--mode", "mosaic", "-m", "2", "-L", "5"])
        .args(["--lengths", "9,10,11,12,13", "--seed", "0", "-o"])
        .arg(&design)
        .status()
        .unwrap()
        .success());
    let mut recs = Vec::new();
    for i in 0..5 {
        let rec = dir.join(format!("rec_{i}.csv"));
        assert!(bin()
            .args(["simulate", "--system", "batch_reactor", "--input"])
            .arg(design.join(format!("member_0{i}.csv")))
            .args(["--x0", "0,0,0,0", "-o"])
            .arg(&rec)
            .status()
            .unwrap()
            .success());
        recs.push(rec.display().to_string());
    }
    // These records pass the length checks but are too sparse to span a
    // depth-9 basis, so the equality system is inconsistent at solve time.
    let out = dir.join("mpc.csv");
    let status = bin()
        .args(["mpc", "--system", "batch_reactor", "--records", &recs.join(",")])
        .args(["--mode", "mosaic", "--horizon", "5", "--bound", "5"])
        .args(["--x0", "1,-0.8,0.6,0.4", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert!(!out.exists(), "no partial artifact on failure");
    let diag = read_json(&dir.join("mpc_result.json"));
    assert_eq!(diag["status"], "failed");
    assert!(diag["error"].as_str().unwrap().len() > 5);
}

#[test]
fn simulate_identify_pipeline_recovers_dynamics() {
    let dir = tmp_dir("pipeline");
    let design = dir.join("design");
    assert!(bin()
        .args(["design", "--mode", "mosaic", "-m", "2", "-L", "5"])
        .args(["--lengths", "9,10,11,12,13", "--seed", "2", "-o"])
        .arg(&design)
        .status()
        .unwrap()
        .success());
    let mut recs = Vec::new();
    for i in 0..5 {
        let rec = dir.join(format!("rec_{i}.csv"));
        assert!(bin()
            .args(["simulate", "--system", "batch_reactor", "--input"])
            .arg(design.join(format!("member_0{i}.csv")))
            .args(["--x0", "0,0,0,0", "-o"])
            .arg(&rec)
            .status()
            .unwrap()
            .success());
        recs.push(rec.display().to_string());
    }
    let out = dir.join("ls.json");
    assert!(bin()
        .args(["identify", "ls", "--records", &recs.join(",")])
        .args(["-n", "4", "-m", "2", "--mode", "mosaic", "-o"])
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let res = read_json(&out);
    assert_eq!(res["unique"], true);
    assert!(res["residual"].as_f64().unwrap() < 1e-8);
}
