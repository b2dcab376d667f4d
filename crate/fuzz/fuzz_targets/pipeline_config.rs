#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::pipeline::PipelineConfig;

fuzz_target!(|text: &str| {
    if let Ok(config) = PipelineConfig::from_toml(text) {
        let _ = config.validate();
        let _ = config.hash();
    }
});
