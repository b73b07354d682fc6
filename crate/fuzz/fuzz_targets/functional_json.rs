#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(f) = covbvm::io::parse_functional_json(text) {
            let _ = f.to_kind();
        }
    }
});
