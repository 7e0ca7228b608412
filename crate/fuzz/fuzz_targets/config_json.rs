#![no_main]

use libfuzzer_sys::fuzz_target;
use palmnet::train::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = ExperimentConfig::parse(text) {
        let _ = cfg.strategy_config();
    }
});
