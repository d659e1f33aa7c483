#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::dataset::Dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ds) = Dataset::parse_str(text) {
        let bytes = ds.to_jsonl_bytes();
        let again = Dataset::parse_str(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(again.to_jsonl_bytes(), bytes);
    }
});
