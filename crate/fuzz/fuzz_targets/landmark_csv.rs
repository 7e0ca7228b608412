#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use palmnet::landmarks::{parse_annotation_csv, parse_landmark_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Parsed rows must hold finite coordinates.
    if let Ok(rows) = parse_landmark_csv(text, Path::new("landmarks.csv")) {
        assert!(rows.iter().all(|r| r.landmarks.is_finite()));
    }
    let _ = parse_annotation_csv(text, Path::new("annotations.csv"));
});
