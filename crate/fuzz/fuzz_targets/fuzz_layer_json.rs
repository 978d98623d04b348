//! Fuzzes the layer-matrix JSON parser and the spectral fit downstream.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(layers) = prefk::io::parse_layer_matrices(text) {
            // Keep the eigensolver's input small; the parser itself has no
            // size cap and giant matrices just burn fuzz time.
            if layers.iter().all(|l| l.rows() <= 16 && l.cols() <= 16) {
                let _ = prefk::analysis::weighted_alpha(
                    &layers,
                    &prefk::analysis::TailRule::default(),
                );
            }
        }
    }
});
