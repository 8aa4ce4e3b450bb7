#![no_main]

use frameforge::clustering::parse_assignment;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(a) = parse_assignment(text) {
        assert!(a.assignments.values().all(|&c| c < a.num_clusters));
        assert_eq!(parse_assignment(&a.to_json()).unwrap(), a);
    }
});
