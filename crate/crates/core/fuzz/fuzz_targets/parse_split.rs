#![no_main]

use frameforge::data::parse_split;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(split) = parse_split(text) {
        assert!(split.folds.values().all(|f| (1..=3).contains(f)));
        assert_eq!(parse_split(&split.to_json()).unwrap(), split);
    }
});
