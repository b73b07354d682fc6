#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = covbvm_cli::ExperimentConfig::from_json(text) {
            let again = covbvm_cli::ExperimentConfig::from_json(&cfg.canonical_json()).unwrap();
            assert_eq!(cfg, again);
        }
    }
});
