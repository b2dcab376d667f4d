#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::dataset::parse_labeled;

fuzz_target!(|line: &str| {
    if let Ok(image) = parse_labeled(line) {
        let text = serde_json::to_string(&image).expect("labeled image serializes");
        assert_eq!(
            parse_labeled(&text).expect("serialized image parses"),
            image
        );
    }
});
