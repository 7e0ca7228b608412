#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use palmnet::classifiers::ScoreMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = ScoreMatrix::parse_csv(text, Path::new("scores.csv"), "fuzz") {
            assert!(m.scores.iter().all(|r| r.len() == m.classes.len()));
        }
    }
});
