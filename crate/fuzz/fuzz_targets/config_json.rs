#![no_main]

use libfuzzer_sys::fuzz_target;
use spoofcm::experiment::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_json(text) {
        if cfg.validate().is_ok() {
            let again = ExperimentConfig::from_json(&cfg.to_json()).expect("round trip");
            assert_eq!(again.to_json(), cfg.to_json());
            for &kind in &cfg.features {
                let _ = cfg.feature_config(kind).config_hash();
            }
        }
    }
});
