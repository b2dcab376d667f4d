#![no_main]

use libfuzzer_sys::fuzz_target;
use webaug::lexicon::Lexicon;
use webaug::matcher::{build_automaton, MatchMode};

fuzz_target!(|text: &str| {
    if let Ok(lexicon) = Lexicon::from_json(text) {
        let again = Lexicon::from_json(&lexicon.to_json()).expect("written lexicon loads");
        assert_eq!(lexicon, again);
        let matcher = build_automaton(&lexicon, MatchMode::WordBoundary);
        let _ = matcher.match_text(text);
    }
});
