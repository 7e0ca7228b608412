#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use palmnet::image::Image;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = Image::decode(data, Path::new("input.png")) {
        assert_eq!(img.data().len(), img.width() * img.height() * img.channels());
    }
});
