#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::textclf::{decode_model, encode_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = decode_model(data) {
        // re-encoding a decoded model is lossless
        let bytes = encode_model(&model);
        let again = decode_model(&bytes).expect("encoded model decodes");
        assert_eq!(encode_model(&again), bytes);
    }
});
