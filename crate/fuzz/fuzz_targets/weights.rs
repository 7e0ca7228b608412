#![no_main]

use libfuzzer_sys::fuzz_target;
use palmnet::nets::Model;

fuzz_target!(|data: &[u8]| {
    if let Ok(file) = ndgrad::weights::decode(data) {
        let again = ndgrad::weights::encode(&file.arch, file.tensors.iter().map(|(n, t)| (n.as_str(), t)));
        assert_eq!(ndgrad::weights::decode(&again).unwrap().tensors.len(), file.tensors.len());
    }
    let _ = Model::decode(data);
});
