#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = covbvm::io::parse_matrix_csv(text) {
            let again = covbvm::io::parse_matrix_csv(&covbvm::io::write_matrix_csv(&m)).unwrap();
            assert_eq!(m.shape(), again.shape());
        }
    }
});
