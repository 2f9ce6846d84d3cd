#![no_main]

use libfuzzer_sys::fuzz_target;
use tokcluster::Codebook;

fuzz_target!(|data: &[u8]| {
    if let Ok(cb) = Codebook::decode_cbk1(data) {
        assert_eq!(cb.encode_cbk1(), data);
    }
});
