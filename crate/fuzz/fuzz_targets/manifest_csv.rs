#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use palmnet::dataset::DatasetManifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = DatasetManifest::parse(text, Path::new("manifest.csv"));
    }
});
