#![no_main]

use libfuzzer_sys::fuzz_target;
use spoofcm::metrics::{evaluate, format_scores, parse_scores, CostParams};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scores) = parse_scores(text) {
        let again = parse_scores(&format_scores(&scores)).expect("formatted scores parse");
        assert_eq!(again, scores);
        if let Ok(ev) = evaluate(&scores, &CostParams::default()) {
            assert!((0.0..=1.0).contains(&ev.eer) && (0.0..=1.0).contains(&ev.min_dcf));
        }
    }
});
