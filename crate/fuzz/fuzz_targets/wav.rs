#![no_main]

use libfuzzer_sys::fuzz_target;
use spoofcm::audio::{decode_wav, encode_wav};

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = decode_wav(data, "fuzz") {
        assert!(clip.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
        // samples already on the 16-bit grid survive a second trip unchanged
        let on_grid = clip.samples.iter().all(|s| (s * 32768.0).fract() == 0.0);
        if let (true, Ok(bytes)) = (on_grid, encode_wav(&clip)) {
            let again = decode_wav(&bytes, "fuzz").expect("re-decode");
            assert_eq!(again.samples, clip.samples);
        }
    }
});
