use std::process::Command;

fn ilab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ilab"))
}

#[test]
fn sweep_writes_the_requested_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let status = ilab()
        .args(["sweep", "--methods", "mean", "--d-grid", "64", "--seeds", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("method,d,seed,train_acc,robust_acc,margin,ratio,eopp_gap,interpolating,wall_ms\n"));
}

#[test]
fn overrides_beat_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "d_grid = 16\nseeds = 3\nmethods = mean\nn1 = 30\nn2 = 10\n").unwrap();
    let out = dir.path().join("r.json");
    let status = ilab()
        .arg("sweep")
        .arg(&cfg)
        .args(["--seeds", "2", "--theta2", "-0.5", "--format", "json", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn malformed_config_reports_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "d_grid = 16\nseeds = lots\n").unwrap();
    let out = ilab().arg("sweep").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("seeds"), "{err}");
}

#[test]
fn unknown_flag_prints_usage() {
    let out = ilab().args(["sweep", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn failed_runs_give_exit_two() {
    // d below N: the hard-margin problem has no solution
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    let status = ilab()
        .args(["sweep", "--methods", "max_margin,mean", "--d-grid", "4", "--seeds", "1", "--n1", "20", "--n2", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("error:"));
}

#[test]
fn preset_matches_the_library() {
    let out = ilab().args(["preset", "--n1", "100", "--n2", "100", "--gamma", "0.01", "--epsilon", "0.05"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let consts = ilab::experiments::Constants::load_default().unwrap();
    let p = ilab::verifier::theorem_preset(100, 100, 0.01, 0.05, &consts.preset, ilab::verifier::HypothesisMode::Strict)
        .unwrap();
    let field = |k: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(&format!("{k} = "))).unwrap().parse().unwrap()
    };
    assert_eq!(field("d") as usize, p.d);
    for (k, v) in [("r_c", p.r_c), ("r_s", p.r_s), ("sigma", p.sigma)] {
        assert!((field(k) / v - 1.0).abs() < 1e-8, "{k}");
    }
    let bad = ilab().args(["preset", "--n1", "40", "--n2", "40", "--gamma", "0.01", "--epsilon", "0.05"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn verify_runs_a_small_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("chain.json");
    let status = ilab().args(["verify", "--instances", "5", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["records"].as_array().unwrap().len(), 5);
}
