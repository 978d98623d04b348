//! Fuzzes the labeled-point JSONL parser and the separation score on
//! whatever survives validation.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((points, labels)) = prefk::io::parse_labeled_points(std::io::Cursor::new(data)) {
        let k = labels.iter().max().map(|m| m + 1).unwrap_or(0);
        if let Ok(assignment) = prefk::analysis::ClusterAssignment::new(points, labels, k) {
            let _ = prefk::analysis::davies_bouldin(&assignment);
        }
    }
});
