#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::textclf::{featurize, parse_labeled_record, DomainVocab};

fuzz_target!(|line: &str| {
    if let Ok(r) = parse_labeled_record(line) {
        let vocab = DomainVocab::build([r.record.domain.as_str()]);
        let f = featurize(&r.record, 1 << 10, &vocab);
        assert!(f.bigram_ids.iter().all(|&b| b < 1 << 10));
    }
});
