#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::syncorpus::parse_truth;

fuzz_target!(|line: &str| {
    let _ = parse_truth(line);
});
