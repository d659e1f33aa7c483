#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::dataset::SplitMode;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(mode) = text.parse::<SplitMode>() {
        assert_eq!(mode.to_string().parse::<SplitMode>().unwrap(), mode);
    }
});
