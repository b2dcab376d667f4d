#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::corpus::{expand_records, parse_item, serialize_item};

fuzz_target!(|line: &str| {
    if let Ok(item) = parse_item(line) {
        // an accepted item survives a write and re-read unchanged
        let again = parse_item(&serialize_item(&item)).expect("serialized item parses");
        assert_eq!(item, again);
        let _ = expand_records(&item);
    }
});
