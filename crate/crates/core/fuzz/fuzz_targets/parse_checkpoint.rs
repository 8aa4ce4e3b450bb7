#![no_main]

use frameforge::learning::parse_checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ck) = parse_checkpoint(text) {
        assert_eq!(parse_checkpoint(&ck.to_json()).unwrap(), ck);
        // a validated encoder must run on a vector of its input width
        let v = vec![0.5f32; ck.encoder.d_in()];
        let _ = ck.encoder.encode(&v);
    }
});
