use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
users = 4
snr_db = 20.0
constellations = ["qam16"]
seed = 3

[numerology]
scs_hz = 60e3
fft_size = 256
n_data_sc = 192
sample_rate_hz = 15.36e6

[array]
rows = 2
cols = 8

[sync]
trials = 20
"#;

fn xlmimo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlmimo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(dir: &TempDir, body: &str) -> String {
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn csv_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn rates_reproduce_prototype_figures() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "users = 8\n");
    let v = json(&xlmimo(&["rates", "--config", &cfg]));
    let gbps = |k: &str| v[k].as_f64().unwrap() / 1e9;
    assert!((gbps("aggregate_sample_rate_bps") - 1453.33).abs() < 0.01);
    assert!((gbps("link_sample_rate_bps") - 90.83).abs() < 0.01);
    assert_eq!(v["ul_data_symbols"], 26);
    assert_eq!(v["dl_data_symbols"], 22);
    assert!((gbps("ul_throughput_bps") - 10.56).abs() < 0.05);
    assert!((gbps("dl_throughput_bps") - 8.92).abs() < 0.05);
}

#[test]
fn simulate_ul_writes_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, SMALL);
    let out = dir.path().join("ul");
    let v = json(&xlmimo(&[
        "simulate-ul",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--distributed",
        "2",
    ]));
    assert_eq!(v["processors"], 2);
    assert_eq!(v["per_user"].as_array().unwrap().len(), 4);
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary, v);
    assert_eq!(csv_rows(&out.join("users.csv")).len(), 5);
    // two processors exchange in both directions
    assert_eq!(csv_rows(&out.join("links.csv")).len(), 3);
    let h = xlmimo::io::load_tensor(&out.join("channel.xlmt")).unwrap();
    assert_eq!((h.n_sc, h.n_elem, h.n_users), (192, 16, 4));
}

#[test]
fn distributed_flag_keeps_results() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, SMALL);
    for cmd in ["simulate-ul", "simulate-dl"] {
        let central = json(&xlmimo(&[cmd, "--config", &cfg]));
        let dist = json(&xlmimo(&[cmd, "--config", &cfg, "--distributed", "4"]));
        assert_eq!(central["per_user"], dist["per_user"], "{cmd}");
        assert_eq!(central["mean_ser"], dist["mean_ser"], "{cmd}");
    }
}

#[test]
fn seed_and_scheme_flags_apply() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, SMALL);
    let a = json(&xlmimo(&[
        "simulate-dl",
        "--config",
        &cfg,
        "--scheme",
        "mr",
    ]));
    assert_eq!(a["scheme"], "mr");
    let b = json(&xlmimo(&["simulate-ul", "--config", &cfg, "--seed", "3"]));
    let c = json(&xlmimo(&["simulate-ul", "--config", &cfg, "--seed", "4"]));
    let d = json(&xlmimo(&["simulate-ul", "--config", &cfg]));
    assert_eq!(b, d);
    assert_ne!(b["per_user"], c["per_user"]);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, SMALL);
    let out = dir.path().join("sweep");
    let v = json(&xlmimo(&[
        "sweep",
        "--config",
        &cfg,
        "--axis",
        "snr",
        "--values",
        "-5,10,30",
        "--out",
        out.to_str().unwrap(),
    ]));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let ser: Vec<f64> = rows
        .iter()
        .map(|r| r["mean_ser"].as_f64().unwrap())
        .collect();
    assert!(ser[0] > ser[1] && ser[1] > ser[2]);
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 4);
}

#[test]
fn analyze_channel_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, SMALL);
    let out = dir.path().join("chan");
    let v = json(&xlmimo(&[
        "analyze-channel",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["elements"], 16);
    assert!(v["median_spread"].as_f64().unwrap() >= 1.0);
    assert_eq!(csv_rows(&out.join("spread.csv")).len(), 193);
    assert_eq!(csv_rows(&out.join("profile.csv")).len(), 1 + 4 * 16);
    assert!(out.join("channel.xlmt").exists());
}

#[test]
fn sync_test_reports_detection() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, SMALL);
    let out = dir.path().join("sync");
    let v = json(&xlmimo(&[
        "sync-test",
        "--config",
        &cfg,
        "--snr-db",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["trials"], 20);
    assert_eq!(v["hits"], 20);
    assert!(v.get("trials_detail").is_none());
    assert_eq!(csv_rows(&out.join("trials.csv")).len(), 21);
}

#[test]
fn errors_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let bad_key = config(&dir, "userz = 4\n");
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate-ul", "--config", &bad_key],
        vec!["simulate-ul", "--config", "/nonexistent/scenario.toml"],
        vec!["simulate-ul", "--scheme", "mmse"],
        vec!["sweep", "--axis", "bandwidth", "--values", "1"],
        vec!["rates", "--distributed", "0"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = xlmimo(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
        assert!(!out.stderr.is_empty());
    }
    // an unsatisfiable scenario is a component error, not a panic
    let cfg = config(&dir, &SMALL.replace("users = 4", "users = 5"));
    let out = xlmimo(&["simulate-ul", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
