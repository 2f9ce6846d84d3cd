#![no_main]

use libfuzzer_sys::fuzz_target;
use tokcluster::tokens::{decode_tok1, encode_tok1};

fuzz_target!(|data: &[u8]| {
    if let Ok(tokens) = decode_tok1(data) {
        assert_eq!(encode_tok1(&tokens), data);
    }
});
