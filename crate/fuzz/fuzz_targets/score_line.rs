#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::scores::parse_score;

fuzz_target!(|line: &str| {
    if let Ok(entry) = parse_score(line) {
        assert!((0.0..=1.0).contains(&entry.score));
    }
});
