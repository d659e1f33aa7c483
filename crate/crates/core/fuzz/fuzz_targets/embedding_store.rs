#![no_main]

use libfuzzer_sys::fuzz_target;
use scanhd_core::EmbeddingStore;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = EmbeddingStore::parse_str(text) {
        let mut out = Vec::new();
        store.write_jsonl(&mut out).unwrap();
        let again = EmbeddingStore::parse_str(std::str::from_utf8(&out).unwrap()).unwrap();
        assert_eq!(again, store);
    }
});
