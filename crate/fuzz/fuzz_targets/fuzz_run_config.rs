//! Fuzzes the run-config document parser, including the validation pass
//! that builds objective and train configurations from it.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = prefk::io::RunConfigFile::from_json(text) {
            // A config that parses must also round-trip and build.
            let json = config.to_json_pretty();
            let again = prefk::io::RunConfigFile::from_json(&json)
                .expect("serialized config must re-parse");
            assert_eq!(config, again);
            let _ = config.build_train_config();
        }
    }
});
