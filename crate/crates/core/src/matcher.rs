//! Web labeling: multi-pattern matching of lexicon phrases against the four
//! metadata fields of each item.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FieldType, WebDataItem};
use crate::dataset::{LabeledDataset, LabeledImage, Provenance};
use crate::error::Result;
use crate::lexicon::{normalize_phrase, Lexicon};

/// Items handed to the worker pool at a time while streaming a corpus.
pub(crate) const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// A phrase fires wherever it occurs, even inside a longer word.
    Substring,
    /// A phrase fires only when flanked by string edges or characters that
    /// are neither letters nor digits.
    #[default]
    WordBoundary,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Substring => "substring",
            MatchMode::WordBoundary => "word-boundary",
        })
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "substring" => Ok(MatchMode::Substring),
            "word-boundary" | "word_boundary" => Ok(MatchMode::WordBoundary),
            _ => Err(format!(
                "unknown match mode {s:?} (expected substring or word-boundary)"
            )),
        }
    }
}

/// Whether `text[start..end]` is delimited by non-alphanumerics or edges.
pub fn on_word_boundary(text: &str, start: usize, end: usize) -> bool {
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}

/// Single-pass matcher over every phrase of a lexicon.
#[derive(Debug, Clone)]
pub struct PhraseMatcher {
    automaton: AhoCorasick,
    /// Distinct phrase texts, indexed by automaton pattern id.
    phrases: Vec<String>,
    /// Categories listing each phrase, ascending.
    owners: Vec<Vec<u32>>,
    mode: MatchMode,
    num_categories: usize,
}

pub fn build_automaton(lexicon: &Lexicon, mode: MatchMode) -> PhraseMatcher {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut phrases = Vec::new();
    let mut owners: Vec<Vec<u32>> = Vec::new();
    for (text, category) in lexicon.phrase_pairs() {
        let id = *index.entry(text).or_insert_with(|| {
            phrases.push(text.to_owned());
            owners.push(Vec::new());
            phrases.len() - 1
        });
        if !owners[id].contains(&category) {
            owners[id].push(category);
        }
    }
    for o in &mut owners {
        o.sort_unstable();
    }
    let automaton = AhoCorasickBuilder::new()
        .match_kind(MatchKind::Standard)
        .build(&phrases)
        .expect("phrase automaton fits in memory");
    PhraseMatcher {
        automaton,
        phrases,
        owners,
        mode,
        num_categories: lexicon.num_categories(),
    }
}

impl PhraseMatcher {
    pub fn mode(&self) -> MatchMode {
        self.mode
    }

    pub fn num_categories(&self) -> usize {
        self.num_categories
    }

    /// Ids of the phrases occurring in already-normalized text.
    fn phrase_ids(&self, normalized: &str) -> BTreeSet<usize> {
        let mut found = BTreeSet::new();
        for m in self.automaton.find_overlapping_iter(normalized) {
            let id = m.pattern().as_usize();
            if found.contains(&id) {
                continue;
            }
            if self.mode == MatchMode::Substring || on_word_boundary(normalized, m.start(), m.end())
            {
                found.insert(id);
            }
        }
        found
    }

    /// Categories whose phrases occur in `text`, with the phrases that fired.
    pub fn match_text(&self, text: &str) -> BTreeMap<u32, BTreeSet<&str>> {
        let normalized = normalize_phrase(text);
        let mut out: BTreeMap<u32, BTreeSet<&str>> = BTreeMap::new();
        for id in self.phrase_ids(&normalized) {
            for &category in &self.owners[id] {
                out.entry(category)
                    .or_default()
                    .insert(self.phrases[id].as_str());
            }
        }
        out
    }
}

/// One category fired by one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchHit {
    pub item_id: String,
    pub category_id: u32,
    pub fields_hit: BTreeSet<FieldType>,
    pub phrases_hit: BTreeSet<String>,
}

/// Every category with at least one phrase in at least one field, ordered by
/// category id. All four fields are always scanned.
pub fn match_item(item: &WebDataItem, matcher: &PhraseMatcher) -> Vec<MatchHit> {
    let mut hits: BTreeMap<u32, MatchHit> = BTreeMap::new();
    for (field, text) in item.fields() {
        for (category, phrases) in matcher.match_text(text) {
            let hit = hits.entry(category).or_insert_with(|| MatchHit {
                item_id: item.item_id.clone(),
                category_id: category,
                fields_hit: BTreeSet::new(),
                phrases_hit: BTreeSet::new(),
            });
            hit.fields_hit.insert(field);
            hit.phrases_hit
                .extend(phrases.into_iter().map(str::to_owned));
        }
    }
    hits.into_values().collect()
}

/// Result of web labeling: the `E_T` dataset plus per-field credit counters.
#[derive(Debug, Clone, PartialEq)]
pub struct WebLabeling {
    pub dataset: LabeledDataset,
    /// For each field, how many labeled pairs it fired for. A pair hit by
    /// two fields is credited to both.
    pub field_credits: [u64; 4],
    pub items_scanned: usize,
}

pub const WEB_DATASET: &str = "E_T";

/// Labels every item of a corpus stream by string match. Work is spread
/// over the current rayon pool; the output is sorted, so it does not depend
/// on the pool size.
pub fn label_by_web<I>(items: I, matcher: &PhraseMatcher) -> Result<WebLabeling>
where
    I: IntoIterator<Item = Result<WebDataItem>>,
{
    let mut labeled = Vec::new();
    let mut field_credits = [0u64; 4];
    let mut items_scanned = 0;
    let mut chunk = Vec::with_capacity(CHUNK);
    let mut items = items.into_iter();
    loop {
        chunk.clear();
        for item in items.by_ref().take(CHUNK) {
            chunk.push(item?);
        }
        if chunk.is_empty() {
            break;
        }
        items_scanned += chunk.len();
        let results: Vec<(&WebDataItem, Vec<MatchHit>)> = chunk
            .par_iter()
            .map(|item| (item, match_item(item, matcher)))
            .collect();
        for (item, hits) in results {
            for hit in hits {
                for f in &hit.fields_hit {
                    field_credits[f.index()] += 1;
                }
                labeled.push(LabeledImage::new(
                    item.item_id.clone(),
                    item.image_ref.clone(),
                    hit.category_id,
                    None,
                    Provenance::WebMatch,
                ));
            }
        }
    }
    Ok(WebLabeling {
        dataset: LabeledDataset::new(WEB_DATASET, labeled),
        field_credits,
        items_scanned,
    })
}
