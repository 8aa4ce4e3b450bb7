#![no_main]

use frameforge::data::parse_dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = parse_dataset(text) {
        let again = parse_dataset(&ds.to_jsonl()).expect("serialized dataset parses");
        assert_eq!(again, ds);
    }
});
