#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::evalkit::{ndcg, parse_ndcg_query};

fuzz_target!(|line: &str| {
    if let Ok((list, depth)) = parse_ndcg_query(line) {
        let v = ndcg(&list, depth).expect("parsed query evaluates");
        assert!((0.0..=1.0).contains(&v));
    }
});
