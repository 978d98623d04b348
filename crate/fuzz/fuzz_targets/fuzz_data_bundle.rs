//! Fuzzes the training-data bundle parser (initial policy plus records).
//! Deserialization validates table shapes, so whatever parses must also
//! survive a forward pass on every in-range record.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(bundle) = serde_json::from_str::<prefk::train::SyntheticData>(text) {
            for record in bundle.records.iter().take(64) {
                let _ = bundle.policy.forward(record);
            }
        }
    }
});
