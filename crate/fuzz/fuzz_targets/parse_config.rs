#![no_main]

use libfuzzer_sys::fuzz_target;
use smsr::SolverConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = SolverConfig::from_json(text) {
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(SolverConfig::from_json(&json).unwrap(), cfg);
    }
});
