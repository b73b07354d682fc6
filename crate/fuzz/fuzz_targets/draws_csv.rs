#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(draws) = covbvm::io::parse_draws_csv(text) {
            if !draws.is_empty() {
                let again = covbvm::io::parse_draws_csv(&covbvm::io::write_draws_csv(&draws).unwrap()).unwrap();
                assert_eq!(draws.len(), again.len());
            }
        }
    }
});
