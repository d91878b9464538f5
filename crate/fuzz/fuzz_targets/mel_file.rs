#![no_main]

use libfuzzer_sys::fuzz_target;
use vnet_core::dsp::melfile::{decode_mel, encode_mel};

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = decode_mel(data) else { return };
    assert_eq!(spec.values.len(), spec.bins * spec.frames);
    assert_eq!(encode_mel(&spec), data);
});
