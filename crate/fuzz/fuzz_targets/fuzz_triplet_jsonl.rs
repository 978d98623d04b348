//! Fuzzes the JSONL triplet-dataset parser: arbitrary bytes must produce
//! either a parsed dataset or a line-numbered error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = prefk::io::parse_dataset(std::io::Cursor::new(data));
});
