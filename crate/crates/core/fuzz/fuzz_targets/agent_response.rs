#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::flywheel::parse_agent_response;

fuzz_target!(|data: &[u8]| {
    if let Ok(line) = std::str::from_utf8(data) {
        let _ = parse_agent_response(line);
    }
});
