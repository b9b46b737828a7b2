#![no_main]

use libfuzzer_sys::fuzz_target;
use nrulab::training::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = TrainConfig::from_json(text) {
        assert_eq!(TrainConfig::from_json(&config.to_json()).expect("round trip"), config);
        let _ = config.validate();
    }
});
