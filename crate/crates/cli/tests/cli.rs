use std::path::Path;
use std::process::{Command, Output};

fn mescf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mescf")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_csv(path: &Path, header: Option<&str>, rows: usize, shift: f64, seed: u64) {
    // small deterministic pseudo-random data
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let mut body = String::new();
    if let Some(h) = header {
        body.push_str(h);
        body.push('\n');
    }
    for _ in 0..rows {
        body.push_str(&format!("{},{}\n", next() + shift, next()));
    }
    std::fs::write(path, body).unwrap();
}

#[test]
fn test_command_prints_flattened_result() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    write_csv(&x, Some("a,b"), 200, 0.0, 1);
    write_csv(&y, Some("a,b"), 200, 1.0, 2);
    let v = json(&mescf(&[
        "test",
        "--x",
        x.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--header",
        "--j",
        "2",
        "--seed",
        "3",
    ]));
    assert_eq!(v["method"], "me-full");
    assert_eq!(v["dof"], 2);
    assert_eq!(v["reject"], true);
    assert!(v["theta"]["locations"].is_object());

    let t2 = json(&mescf(&["test", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(), "--header", "--method", "t2"]));
    assert_eq!(t2["dof"], 2);
}

#[test]
fn unequal_sizes_need_the_subsample_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = (dir.path().join("x.csv"), dir.path().join("y.csv"));
    write_csv(&x, None, 120, 0.0, 1);
    write_csv(&y, None, 90, 0.0, 2);
    let args = ["test", "--x", x.to_str().unwrap(), "--y", y.to_str().unwrap(), "--method", "mmd-lin"];
    let out = mescf(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let mut with_flag = args.to_vec();
    with_flag.push("--subsample-to-min");
    json(&mescf(&with_flag));
}

#[test]
fn ragged_csv_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    std::fs::write(&x, "1,2\n3\n").unwrap();
    let out = mescf(&["test", "--x", x.to_str().unwrap(), "--y", x.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn power_sweep_then_features() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"optim": {"max_iters": 20}}"#).unwrap();
    let v = json(&mescf(&[
        "power",
        "--problem",
        "gmd",
        "--method",
        "me-full",
        "--n",
        "50,100",
        "--d",
        "3",
        "--trials",
        "4",
        "--j",
        "1",
        "--seed",
        "5",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    assert_eq!(v.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out_dir.join("power.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let trials = std::fs::read_to_string(out_dir.join("trials.jsonl")).unwrap();
    assert_eq!(trials.lines().count(), 8);

    let names = dir.path().join("names.csv");
    std::fs::write(&names, "alpha,beta,gamma\n").unwrap();
    let sig = json(&mescf(&[
        "features",
        "--reports",
        out_dir.join("trials.jsonl").to_str().unwrap(),
        "--k",
        "1",
        "--names",
        names.to_str().unwrap(),
    ]));
    assert_eq!(sig["trials"], 8);
    assert_eq!(sig["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>(), 8);
    assert!(sig["top"][0]["name"].is_string());
}

#[test]
fn power_rejects_missing_source() {
    let dir = tempfile::tempdir().unwrap();
    let out = mescf(&["power", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn bound_command() {
    let v = json(&mescf(&["bound", "--n", "10000", "--j", "1", "--lambda", "10,1e9", "--class", "full", "--d", "1"]));
    assert_eq!(v["label"], "up to universal constants");
    assert_eq!(v["vc"]["f1"], 4);
    assert!(v["vc"]["note"].is_string());
    assert_eq!(v["constants"]["c1_bar"], 4.0);
    let lb = v["lower_bounds"].as_array().unwrap();
    assert_eq!(lb.len(), 2);
    assert!(lb[1][1].as_f64().unwrap() > lb[0][1].as_f64().unwrap());
}
