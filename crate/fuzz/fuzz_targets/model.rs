#![no_main]

use libfuzzer_sys::fuzz_target;
use spoofcm::classifiers::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        let bytes = encode_model(&model);
        let again = decode_model(&bytes).expect("re-encoded model decodes");
        assert_eq!(encode_model(&again), bytes);
    }
});
