//! Replays the checked-in fuzz seeds through the same round trips the fuzz
//! targets assert, so the corpus stays valid without a fuzzing toolchain.

use std::fs;
use std::path::{Path, PathBuf};

use tokcluster::tokens::{decode_tok1, encode_tok1, parse_jsonl, to_jsonl};
use tokcluster::toytrain::ExperimentConfig;
use tokcluster::{ClusterAssignment, Codebook, PermutationFile};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (path, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(path: &Path, bytes: &[u8]) -> String {
    String::from_utf8(bytes.to_vec()).unwrap_or_else(|_| panic!("{} is not UTF-8", path.display()))
}

#[test]
fn cbk1_seeds_round_trip() {
    for (path, bytes) in seeds("decode_cbk1") {
        let cb =
            Codebook::decode_cbk1(&bytes).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(cb.encode_cbk1(), bytes);
    }
}

#[test]
fn csv_seeds_round_trip() {
    for (path, bytes) in seeds("parse_csv") {
        let cb = Codebook::parse_csv(&text(&path, &bytes)).unwrap();
        let back = Codebook::parse_csv(&cb.to_csv()).unwrap();
        assert_eq!(back, cb, "{}", path.display());
    }
}

#[test]
fn tok1_seeds_round_trip() {
    for (_, bytes) in seeds("decode_tok1") {
        assert_eq!(encode_tok1(&decode_tok1(&bytes).unwrap()), bytes);
    }
}

#[test]
fn jsonl_seeds_round_trip() {
    for (path, bytes) in seeds("parse_jsonl") {
        let seqs = parse_jsonl(&text(&path, &bytes)).unwrap();
        assert_eq!(parse_jsonl(&to_jsonl(&seqs)).unwrap(), seqs);
    }
}

#[test]
fn assignment_seeds_parse() {
    for (path, bytes) in seeds("assignment_json") {
        let asg = ClusterAssignment::from_json_str(&text(&path, &bytes)).unwrap();
        assert_eq!(
            ClusterAssignment::from_json_str(&asg.to_json_string()).unwrap(),
            asg
        );
    }
}

#[test]
fn permutation_seeds_parse() {
    for (path, bytes) in seeds("permutation_json") {
        let (file, map) = PermutationFile::from_json_str(&text(&path, &bytes)).unwrap();
        let (_, again) = PermutationFile::from_json_str(&file.to_json_string()).unwrap();
        assert_eq!(again, map);
    }
}

#[test]
fn config_seeds_parse() {
    for (path, bytes) in seeds("experiment_config") {
        let cfg = ExperimentConfig::from_json_str(&text(&path, &bytes)).unwrap();
        let back = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&back).unwrap(), cfg);
    }
}

#[test]
fn malformed_inputs_are_errors_not_panics() {
    let cbk1 = [
        &b""[..],
        b"CBK1",
        b"CBK1\x01\x00\x00\x00\x01\x00\x00\x00",
        b"XXXX\x00\x00\x00\x00\x00\x00\x00\x00",
    ];
    for bytes in cbk1 {
        assert!(Codebook::decode_cbk1(bytes).is_err());
    }
    let mut huge = b"CBK1".to_vec();
    huge.extend_from_slice(&u32::MAX.to_le_bytes());
    huge.extend_from_slice(&u32::MAX.to_le_bytes());
    assert!(Codebook::decode_cbk1(&huge).is_err());
    for bytes in [&b"TOK1\x02\x00\x00\x00\x01\x00\x00\x00"[..], b"TOK"] {
        assert!(decode_tok1(bytes).is_err());
    }
    assert!(Codebook::parse_csv("1,2\n3\n").is_err());
    assert!(Codebook::parse_csv("nan\n").is_err());
    assert!(parse_jsonl("{\"class\":0}\n").is_err());
    assert!(ClusterAssignment::from_json_str(r#"{"n":2,"m":2,"seed":0,"iterations_run":0,"converged":true,"assignment":[0,0,0,1],"centroids":[[0],[1]]}"#).is_err());
    assert!(PermutationFile::from_json_str(r#"{"n":1,"m":2,"forward":[0,0]}"#).is_err());
    assert!(ExperimentConfig::from_json_str(r#"{"lambdas":[]}"#).is_err());
}
