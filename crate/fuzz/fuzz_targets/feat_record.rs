#![no_main]

use libfuzzer_sys::fuzz_target;
use spoofcm::features::decode_record;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, values)) = decode_record(data) {
        assert_eq!(values.len(), header.dim as usize * header.frames as usize);
    }
});
