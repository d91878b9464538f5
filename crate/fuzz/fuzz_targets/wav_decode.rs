#![no_main]

use libfuzzer_sys::fuzz_target;
use vnet_core::dsp::wav::{decode_wav, encode_wav};

fuzz_target!(|data: &[u8]| {
    let Ok(clip) = decode_wav(data) else { return };
    assert!(clip.sample_rate > 0);
    assert!(clip.samples.iter().all(|s| s.is_finite() && s.abs() <= 1.0));
    // Our own PCM16 output must decode to the same length and rate.
    let again = decode_wav(&encode_wav(&clip)).expect("re-decode");
    assert_eq!(again.samples.len(), clip.samples.len());
    assert_eq!(again.sample_rate, clip.sample_rate);
});
