#![no_main]

use libfuzzer_sys::fuzz_target;
use tokcluster::Codebook;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cb) = Codebook::parse_csv(text) {
        let back = Codebook::parse_csv(&cb.to_csv()).unwrap();
        let bits = |c: &Codebook| c.entries().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&cb));
        assert_eq!(back.dim(), cb.dim());
    }
});
