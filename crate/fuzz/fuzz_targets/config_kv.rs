#![no_main]

use crowdlearn::cli::RunConfig;
use crowdlearn::config::parse_kv;
use crowdlearn::synth::SynthConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(pairs) = parse_kv(text) {
        let _ = RunConfig::default().apply(&pairs);
    }
    if let Ok(cfg) = SynthConfig::from_kv(text) {
        let back = SynthConfig::from_kv(&cfg.to_kv()).expect("printed config parses");
        assert_eq!(back.to_kv(), cfg.to_kv());
    }
});
