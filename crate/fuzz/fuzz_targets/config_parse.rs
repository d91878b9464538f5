#![no_main]

use libfuzzer_sys::fuzz_target;
use vnet_core::config::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = TrainConfig::parse(text) else { return };
    let back = TrainConfig::parse(&cfg.to_text()).expect("canonical text parses");
    assert_eq!(back, cfg);
});
