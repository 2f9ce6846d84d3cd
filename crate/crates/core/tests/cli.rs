use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tokcluster"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&o.stdout)
        )
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn cluster_tiny_codebook() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("asg.json");
    let o = bin(&[
        "cluster",
        "--codebook",
        s(&data("tiny4.cbk1")),
        "--clusters",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["n"], 2);
    assert_eq!(summary["m"], 2);
    let asg: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let a: Vec<u64> = asg["assignment"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(a[0], a[1]);
    assert_eq!(a[2], a[3]);
    assert_ne!(a[0], a[2]);
}

#[test]
fn cluster_accepts_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("asg.json");
    let o = bin(&[
        "cluster",
        "--codebook",
        s(&data("tiny4.csv")),
        "--clusters",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
}

#[test]
fn cluster_count_must_divide_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("asg.json");
    let o = bin(&[
        "cluster",
        "--codebook",
        s(&data("random16.cbk1")),
        "--clusters",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);
    assert!(
        String::from_utf8_lossy(&o.stderr).contains("divide"),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(o.stdout.is_empty());
    assert!(!out.exists());
}

#[test]
fn cluster_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = bin(&[
            "cluster",
            "--codebook",
            s(&data("random16.cbk1")),
            "--clusters",
            "4",
            "--seed",
            "9",
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn bad_codebook_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cbk1");
    fs::write(&bad, b"CBK1\x02\x00\x00\x00").unwrap();
    let out = dir.path().join("asg.json");
    let o = bin(&[
        "cluster",
        "--codebook",
        s(&bad),
        "--clusters",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 2);
    let missing = dir.path().join("missing.cbk1");
    let o = bin(&["analyze", "--codebook", s(&missing)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&bin(&[])), 1);
    assert_eq!(code(&bin(&["cluster"])), 1);
    assert_eq!(code(&bin(&["no-such-command"])), 1);
    assert_eq!(code(&bin(&["gradcheck", "--instances", "many"])), 1);
    assert_eq!(code(&bin(&["--help"])), 0);
}

#[test]
fn rearrange_interleaved_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let cb = dir.path().join("re.cbk1");
    let perm = dir.path().join("perm.json");
    let o = bin(&[
        "rearrange",
        "--codebook",
        s(&data("tiny4.cbk1")),
        "--assignment",
        s(&data("tiny4_interleaved.json")),
        "--out-codebook",
        s(&cb),
        "--out-perm",
        s(&perm),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let p: Value = serde_json::from_str(&fs::read_to_string(&perm).unwrap()).unwrap();
    assert_eq!(p["forward"], serde_json::json!([2, 0, 3, 1]));
    assert_eq!(stdout_json(&o)["identity"], false);
}

#[test]
fn rearrange_contiguous_assignment_keeps_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cb = dir.path().join("re.cbk1");
    let perm = dir.path().join("perm.json");
    let o = bin(&[
        "rearrange",
        "--codebook",
        s(&data("tiny4.cbk1")),
        "--assignment",
        s(&data("tiny4_contiguous.json")),
        "--out-codebook",
        s(&cb),
        "--out-perm",
        s(&perm),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(&cb).unwrap(),
        fs::read(data("tiny4.cbk1")).unwrap()
    );
    let p: Value = serde_json::from_str(&fs::read_to_string(&perm).unwrap()).unwrap();
    assert_eq!(p["forward"], serde_json::json!([0, 1, 2, 3]));
    assert_eq!(stdout_json(&o)["identity"], true);
}

#[test]
fn rearrange_size_mismatch_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "rearrange",
        "--codebook",
        s(&data("random16.cbk1")),
        "--assignment",
        s(&data("tiny4_interleaved.json")),
        "--out-codebook",
        s(&dir.path().join("x.cbk1")),
        "--out-perm",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn analyze_reports_cluster_statistics() {
    let o = bin(&[
        "analyze",
        "--codebook",
        s(&data("tiny4.cbk1")),
        "--assignment",
        s(&data("tiny4_contiguous.json")),
    ]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    for key in ["inner_mse", "mean", "closest", "largest"] {
        assert!(v[key].is_number(), "missing {key}: {v}");
    }
    // both clusters are pairs 0.1 apart
    assert!((v["mean"].as_f64().unwrap() - 0.1).abs() < 1e-6);
    assert!((v["inner_mse"].as_f64().unwrap() - 0.05).abs() < 1e-6);
}

#[test]
fn oracle_on_line_codebook() {
    let o = bin(&["oracle", "--codebook", s(&data("line4.cbk1"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        stdout_json(&o),
        serde_json::json!({"perm": [0, 1, 2, 3], "cost": 7.0})
    );
}

#[test]
fn oracle_refuses_above_limit() {
    let o = bin(&[
        "oracle",
        "--codebook",
        s(&data("random16.cbk1")),
        "--limit",
        "8",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gradcheck_default_passes() {
    let o = bin(&["gradcheck"]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    assert_eq!(v["pass"], true);
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn train_toy_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let curve = dir.path().join("curve.csv");
    let cfg = data("toy_small.json");
    let args = [
        "train-toy",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--loss-curve",
        s(&curve),
    ];
    let o = bin(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    assert!(v["verdict"].is_boolean());
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["n"], 4);
    assert_eq!(
        fs::read_to_string(&curve).unwrap().lines().count(),
        1 + 2 * 3
    );
    let first = fs::read(&out).unwrap();
    assert_eq!(code(&bin(&args)), 0);
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn train_toy_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"dataset": {"seq_len": 8}}"#).unwrap();
    let o = bin(&[
        "train-toy",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sample_neutral_settings() {
    let o = bin(&[
        "sample",
        "--logits",
        s(&data("logits4.json")),
        "--draws",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    let p: Vec<f64> = v["distribution"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(p.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(v["draws"].as_array().unwrap().len(), 5);
    let again = bin(&[
        "sample",
        "--logits",
        s(&data("logits4.json")),
        "--draws",
        "5",
        "--seed",
        "3",
    ]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn sample_rejects_bad_temperature() {
    let o = bin(&[
        "sample",
        "--logits",
        s(&data("logits4.json")),
        "--temperature",
        "0",
    ]);
    assert_eq!(code(&o), 1);
}
