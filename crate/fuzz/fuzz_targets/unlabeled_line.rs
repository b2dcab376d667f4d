#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::corpus::parse_unlabeled;

fuzz_target!(|line: &str| {
    let _ = parse_unlabeled(line);
});
