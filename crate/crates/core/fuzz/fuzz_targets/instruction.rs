#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::dataset::{parse_instruction, parse_instruction_loose};
use scanhd_core::eval::normalize_instruction;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_instruction(text);
    let (slot, _) = parse_instruction_loose(text);
    slot.validate().unwrap();
    let n = normalize_instruction(text);
    assert_eq!(normalize_instruction(&n), n);
});
