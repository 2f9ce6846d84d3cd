#![no_main]

use libfuzzer_sys::fuzz_target;
use tokcluster::ClusterAssignment;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(asg) = ClusterAssignment::from_json_str(text) {
        let again = ClusterAssignment::from_json_str(&asg.to_json_string()).unwrap();
        assert_eq!(again.assignment, asg.assignment);
    }
});
