#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::ScanModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ScanModel::from_json_str(text) {
        let json = model.to_json();
        assert_eq!(ScanModel::from_json_str(&json).unwrap().to_json(), json);
    }
});
