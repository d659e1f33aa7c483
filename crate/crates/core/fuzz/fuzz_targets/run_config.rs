#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse_str(text) {
        let _ = cfg.synth();
        let _ = cfg.fusion_config();
        let _ = cfg.training();
        cfg.split_mode().unwrap();
    }
});
