#![no_main]

use libfuzzer_sys::fuzz_target;
use vnet_core::trainer::{Checkpoint, Manifest};

// Input: manifest text, a NUL byte, then the blob.
fuzz_target!(|data: &[u8]| {
    let (head, blob) = match data.iter().position(|&b| b == 0) {
        Some(i) => (&data[..i], &data[i + 1..]),
        None => (data, &[][..]),
    };
    let Ok(text) = std::str::from_utf8(head) else { return };
    let Ok(manifest) = Manifest::parse(text) else { return };
    assert_eq!(Manifest::parse(&manifest.to_text()).expect("re-parse"), manifest);
    if let Ok(ck) = Checkpoint::from_parts(manifest.clone(), blob, String::new()) {
        assert_eq!(ck.manifest(), manifest);
    }
});
