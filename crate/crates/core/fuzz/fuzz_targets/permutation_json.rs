#![no_main]

use libfuzzer_sys::fuzz_target;
use tokcluster::PermutationFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((file, map)) = PermutationFile::from_json_str(text) {
        let (_, again) = PermutationFile::from_json_str(&file.to_json_string()).unwrap();
        assert_eq!(again, map);
        assert_eq!(map.inverted().inverted(), map);
    }
});
