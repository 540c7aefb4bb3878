#![no_main]

use libfuzzer_sys::fuzz_target;
use spoofcm::protocol::{format_manifest, parse_manifest, validate_protocol};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_manifest(text) {
        let again = parse_manifest(&format_manifest(&entries)).expect("formatted manifest parses");
        assert_eq!(again, entries);
        let _ = validate_protocol(&entries);
    }
});
