#![no_main]

use libfuzzer_sys::fuzz_target;
use tokcluster::tokens::{parse_jsonl, to_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(seqs) = parse_jsonl(text) {
        assert_eq!(parse_jsonl(&to_jsonl(&seqs)).unwrap(), seqs);
    }
});
