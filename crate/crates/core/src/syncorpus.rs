//! Synthetic corpora with planted ground truth.
//!
//! Each generated item is one of four kinds:
//!
//! * **positive**: belongs to category `c`; one phrase of `c` is planted in
//!   one field, and some fields carry `c`'s context bigrams;
//! * **ambiguous noise**: belongs to no category, yet carries the
//!   designated ambiguous phrase of some `c` next to "other sense" context;
//! * **hidden positive**: belongs to `c` but mentions no lexicon phrase,
//!   only `c`'s context;
//! * **background**: filler text only.
//!
//! Lexicon words are wrapped as `z…x` and filler words never contain `z` or
//! `x`, so the matcher fires exactly where a phrase was planted, in either
//! matching mode.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FieldType, UnlabeledImageRef, WebDataItem};
use crate::error::{check_unit, Error, Result};
use crate::evalkit::Truth;
use crate::jsonl::{RecordReader, RecordWriter};
use crate::lexicon::{Category, Lexicon, Phrase};
use crate::scores::{synthetic_score, ScoreEntry, SyntheticScoreParams, SyntheticScores};

const LANGS: [&str; 12] = [
    "ar", "zh", "en", "fr", "de", "el", "he", "hi", "it", "ja", "ru", "es",
];
const FILLER_LETTERS: &[u8] = b"abdefghiklmnoprstuv";
const CONSONANTS: &[u8] = b"bdfghklmnprstv";
const VOWELS: &[u8] = b"aeiou";
const TLDS: [&str; 4] = ["com", "org", "net", "info"];

const FILLER_WORDS: usize = 400;
const CONTEXT_PHRASES: usize = 6;
const NOISE_CONTEXT_PHRASES: usize = 16;
const DOMAINS_PER_CATEGORY: usize = 3;
const GENERAL_DOMAINS: usize = 60;
/// Chance that an optional field is present, per field.
const FIELD_PRESENCE: [f64; 4] = [0.35, 0.7, 0.9, 0.9];
/// Chance that a present field carries a context phrase.
const CONTEXT_PROB: f64 = 0.6;
/// Chance that a positive item is hosted on one of its category's domains.
const TOPICAL_DOMAIN_PROB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub categories: u32,
    pub items: usize,
    /// Fraction of planted matches that are ambiguous noise.
    pub noise_rate: f64,
    /// Share of planted matches placed in anchor, alt, title, surrounding.
    pub field_mix: [f64; 4],
    /// Category `r` (1-based popularity rank) gets weight `r^-skew`.
    pub popularity_skew: f64,
    pub score_sharpness: f64,
    pub noise_flip_prob: f64,
    /// Fraction of items that belong to a category without naming it.
    pub hidden_fraction: f64,
    /// Fraction of items with filler text only.
    pub background_fraction: f64,
    pub phrases_per_category: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            categories: 10,
            items: 20_000,
            noise_rate: 0.8,
            field_mix: [0.05, 0.30, 0.15, 0.50],
            popularity_skew: 1.0,
            score_sharpness: 2.0,
            noise_flip_prob: 0.0,
            hidden_fraction: 0.1,
            background_fraction: 0.1,
            phrases_per_category: 4,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.items == 0 || self.phrases_per_category == 0 {
            return Err(Error::Config(
                "categories, items and phrases_per_category must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::OutOfRange {
                name: "noise_rate",
                value: self.noise_rate,
                range: "[0,1)",
            });
        }
        if self.field_mix.iter().any(|p| !(0.0..).contains(p)) {
            return Err(Error::Config(
                "field_mix entries must be non-negative".into(),
            ));
        }
        let total: f64 = self.field_mix.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "field_mix must sum to 1, got {total}"
            )));
        }
        check_unit("hidden_fraction", self.hidden_fraction)?;
        check_unit("background_fraction", self.background_fraction)?;
        check_unit("noise_flip_prob", self.noise_flip_prob)?;
        if self.hidden_fraction + self.background_fraction > 1.0 {
            return Err(Error::Config(
                "hidden_fraction + background_fraction exceeds 1".into(),
            ));
        }
        if !(0.0..).contains(&self.popularity_skew) || !(0.0..).contains(&self.score_sharpness) {
            return Err(Error::Config(
                "popularity_skew and score_sharpness must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn score_params(&self) -> SyntheticScoreParams {
        SyntheticScoreParams {
            seed: self.seed,
            sharpness: self.score_sharpness,
            flip_prob: self.noise_flip_prob,
        }
    }

    pub fn popularity_weights(&self) -> Vec<f64> {
        (1..=self.categories)
            .map(|rank| (rank as f64).powf(-self.popularity_skew))
            .collect()
    }
}

/// Largest-remainder split of `total` in proportion to `weights`.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // larger remainder first, lower index on ties
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &idx in order.iter().take(total.saturating_sub(assigned)) {
        counts[idx] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlantedMatch {
    pub category: u32,
    pub field: FieldType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub id: String,
    pub true_category: Option<u32>,
    pub planted: Vec<PlantedMatch>,
}

pub fn parse_truth(line: &str) -> std::result::Result<TruthEntry, String> {
    let e: TruthEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if e.id.is_empty() {
        return Err("missing id".into());
    }
    Ok(e)
}

/// True category per item and the table of planted phrase occurrences.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    entries: Vec<TruthEntry>,
    index: HashMap<String, usize>,
}

impl GroundTruth {
    pub fn new(entries: Vec<TruthEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        GroundTruth { entries, index }
    }

    pub fn entries(&self) -> &[TruthEntry] {
        &self.entries
    }

    pub fn get(&self, item_id: &str) -> Option<&TruthEntry> {
        self.index.get(item_id).map(|&i| &self.entries[i])
    }

    /// Every planted `(category, item)` pair.
    pub fn planted_pairs(&self) -> BTreeSet<(u32, &str)> {
        self.entries
            .iter()
            .flat_map(|e| e.planted.iter().map(move |p| (p.category, e.id.as_str())))
            .collect()
    }

    pub fn category_map(&self) -> HashMap<String, Option<u32>> {
        self.entries
            .iter()
            .map(|e| (e.id.clone(), e.true_category))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries = RecordReader::open(path, parse_truth)?.collect::<Result<Vec<_>>>()?;
        Ok(GroundTruth::new(entries))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write_all(path, &self.entries)
    }

    /// Score provider computing the oracle scores on the fly.
    pub fn score_provider(&self, params: SyntheticScoreParams) -> SyntheticScores {
        SyntheticScores::new(self.category_map(), params)
    }
}

impl Truth for GroundTruth {
    fn true_category(&self, item_id: &str) -> Option<Option<u32>> {
        self.get(item_id).map(|e| e.true_category)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: GeneratorConfig,
    pub items: Vec<WebDataItem>,
    pub lexicon: Lexicon,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedPaths {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub scores: PathBuf,
    pub truth: PathBuf,
    pub unlabeled: PathBuf,
}

impl GeneratedPaths {
    pub fn in_dir(dir: &Path) -> Self {
        GeneratedPaths {
            corpus: dir.join("corpus.jsonl"),
            lexicon: dir.join("lexicon.json"),
            scores: dir.join("scores.jsonl"),
            truth: dir.join("truth.jsonl"),
            unlabeled: dir.join("unlabeled.jsonl"),
        }
    }
}

impl SyntheticCorpus {
    /// Oracle score of every `(item, category)` pair.
    pub fn score_entries(&self) -> impl Iterator<Item = ScoreEntry> + '_ {
        let params = self.config.score_params();
        self.truth.entries().iter().flat_map(move |e| {
            (1..=self.config.categories).map(move |c| ScoreEntry {
                id: Some(e.id.clone()),
                image_ref: None,
                category: c,
                score: synthetic_score(&params, &e.id, c, e.true_category == Some(c)),
            })
        })
    }

    pub fn unlabeled(&self) -> Vec<UnlabeledImageRef> {
        self.items
            .iter()
            .map(|i| UnlabeledImageRef {
                item_id: i.item_id.clone(),
                image_ref: i.image_ref.clone(),
            })
            .collect()
    }

    pub fn score_provider(&self) -> SyntheticScores {
        self.truth.score_provider(self.config.score_params())
    }

    /// Writes corpus, lexicon, oracle scores, truth and the unlabeled pool.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<GeneratedPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = GeneratedPaths::in_dir(dir);
        crate::corpus::write_corpus(&paths.corpus, &self.items)?;
        crate::lexicon::save_lexicon(&self.lexicon, &paths.lexicon)?;
        let mut scores = RecordWriter::create(&paths.scores)?;
        for e in self.score_entries() {
            scores.write(&e)?;
        }
        scores.finish()?;
        self.truth.write(&paths.truth)?;
        crate::corpus::write_unlabeled(&paths.unlabeled, &self.unlabeled())?;
        Ok(paths)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Positive(u32),
    Ambiguous(u32),
    Hidden(u32),
    Background,
}

struct Vocabulary {
    filler: Vec<String>,
    context: Vec<Vec<String>>,
    noise_context: Vec<String>,
    topical_domains: Vec<Vec<String>>,
    general_domains: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    if rng.gen_bool(0.5) {
        w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
    }
    w
}

fn unique_words(rng: &mut ChaCha8Rng, seen: &mut HashSet<String>, n: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn word_pairs(rng: &mut ChaCha8Rng, seen: &mut HashSet<String>, n: usize) -> Vec<String> {
    unique_words(rng, seen, 2 * n)
        .chunks(2)
        .map(|p| format!("{} {}", p[0], p[1]))
        .collect()
}

impl Vocabulary {
    fn new(categories: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut seen = HashSet::new();
        let filler = unique_words(rng, &mut seen, FILLER_WORDS);
        let context = (0..categories)
            .map(|_| word_pairs(rng, &mut seen, CONTEXT_PHRASES))
            .collect();
        let noise_context = word_pairs(rng, &mut seen, NOISE_CONTEXT_PHRASES);
        let mut domain = |rng: &mut ChaCha8Rng| {
            let name = unique_words(rng, &mut seen, 1).remove(0);
            format!("{name}.{}", TLDS[rng.gen_range(0..TLDS.len())])
        };
        let topical_domains = (0..categories)
            .map(|_| (0..DOMAINS_PER_CATEGORY).map(|_| domain(rng)).collect())
            .collect();
        let general_domains = (0..GENERAL_DOMAINS).map(|_| domain(rng)).collect();
        Vocabulary {
            filler,
            context,
            noise_context,
            topical_domains,
            general_domains,
        }
    }
}

/// Lexicon word number `n`: `z`, base-19 digits over filler letters, `x`.
fn lexicon_word(mut n: usize) -> String {
    let base = FILLER_LETTERS.len();
    let mut digits = Vec::new();
    loop {
        digits.push(FILLER_LETTERS[n % base]);
        n /= base;
        if n == 0 {
            break;
        }
    }
    while digits.len() < 3 {
        digits.push(FILLER_LETTERS[0]);
    }
    let mut w = String::from("z");
    w.extend(digits.iter().rev().map(|&b| b as char));
    w.push('x');
    w
}

fn build_lexicon(config: &GeneratorConfig) -> Result<Lexicon> {
    let mut next_word = 0;
    let categories = (1..=config.categories)
        .map(|id| {
            let phrases = (0..config.phrases_per_category)
                .map(|j| {
                    // alternate one- and two-word phrases
                    let words = if j % 2 == 0 { 1 } else { 2 };
                    let text = (0..words)
                        .map(|_| {
                            next_word += 1;
                            lexicon_word(next_word - 1)
                        })
                        .collect::<Vec<_>>()
                        .join(" ");
                    Phrase {
                        text,
                        lang: LANGS[(id as usize + j) % LANGS.len()].to_owned(),
                    }
                })
                .collect();
            Category {
                id,
                name: format!("category-{id}"),
                phrases,
            }
        })
        .collect();
    Lexicon::new(categories)
}

/// The phrase reserved for ambiguity noise in each category.
fn ambiguous_phrase(lexicon: &Lexicon, category: u32) -> &str {
    &lexicon.category(category).expect("category exists").phrases[0].text
}

fn pick<'a>(rng: &mut ChaCha8Rng, from: &'a [String]) -> &'a str {
    &from[rng.gen_range(0..from.len())]
}

fn pick_field(rng: &mut ChaCha8Rng, mix: &[f64; 4]) -> FieldType {
    let mut u: f64 = rng.gen();
    for (f, p) in FieldType::ALL.into_iter().zip(mix) {
        if u < *p {
            return f;
        }
        u -= p;
    }
    // rounding slack lands on the last field with positive weight
    FieldType::ALL
        .into_iter()
        .rev()
        .find(|f| mix[f.index()] > 0.0)
        .unwrap_or(FieldType::Surrounding)
}

fn field_text(
    rng: &mut ChaCha8Rng,
    vocab: &Vocabulary,
    context: Option<&str>,
    phrase: Option<&str>,
) -> String {
    let n = rng.gen_range(3..=8);
    let mut tokens: Vec<String> = (0..n)
        .map(|_| pick(rng, &vocab.filler).to_owned())
        .collect();
    for insert in [context, phrase].into_iter().flatten() {
        let at = rng.gen_range(0..=tokens.len());
        tokens.insert(at, insert.to_owned());
    }
    tokens.join(" ")
}

fn capitalize_words(text: &str) -> String {
    text.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next()
                .map(|f| f.to_uppercase().chain(c).collect())
                .unwrap_or_default()
        })
        .collect::<Vec<String>>()
        .join(" ")
}

/// Generates a corpus, its lexicon and ground truth; deterministic in the
/// config's seed.
pub fn generate(config: &GeneratorConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lexicon = build_lexicon(config)?;
    let vocab = Vocabulary::new(config.categories, &mut rng);
    let weights = config.popularity_weights();

    let n_matched = (config.items as f64
        * (1.0 - config.hidden_fraction - config.background_fraction))
        .round() as usize;
    let n_hidden = ((config.items as f64 * config.hidden_fraction).round() as usize)
        .min(config.items - n_matched);
    let mut kinds = Vec::with_capacity(config.items);
    for (idx, matches) in apportion(n_matched, &weights).into_iter().enumerate() {
        let c = idx as u32 + 1;
        let noise = (config.noise_rate * matches as f64).round() as usize;
        kinds.extend(std::iter::repeat_n(Kind::Ambiguous(c), noise));
        kinds.extend(std::iter::repeat_n(Kind::Positive(c), matches - noise));
    }
    for (idx, count) in apportion(n_hidden, &weights).into_iter().enumerate() {
        kinds.extend(std::iter::repeat_n(Kind::Hidden(idx as u32 + 1), count));
    }
    kinds.resize(config.items, Kind::Background);
    kinds.shuffle(&mut rng);

    let mut items = Vec::with_capacity(config.items);
    let mut truth = Vec::with_capacity(config.items);
    for (n, kind) in kinds.into_iter().enumerate() {
        let id = format!("img{n:07}");
        let (true_category, planted_category, context_pool): (
            Option<u32>,
            Option<u32>,
            Option<&[String]>,
        ) = match kind {
            Kind::Positive(c) => (Some(c), Some(c), Some(&vocab.context[c as usize - 1])),
            Kind::Ambiguous(c) => (None, Some(c), Some(&vocab.noise_context)),
            Kind::Hidden(c) => (Some(c), None, Some(&vocab.context[c as usize - 1])),
            Kind::Background => (None, None, None),
        };
        let phrase = planted_category.map(|c| {
            let text = match kind {
                Kind::Ambiguous(_) => ambiguous_phrase(&lexicon, c).to_owned(),
                _ => {
                    let phrases = &lexicon.category(c).expect("category exists").phrases;
                    phrases[rng.gen_range(0..phrases.len())].text.clone()
                }
            };
            if rng.gen_bool(0.3) {
                capitalize_words(&text)
            } else {
                text
            }
        });
        let primary = pick_field(&mut rng, &config.field_mix);
        let mut fields: [String; 4] = Default::default();
        for f in FieldType::ALL {
            let is_primary = f == primary;
            if !is_primary && !rng.gen_bool(FIELD_PRESENCE[f.index()]) {
                continue;
            }
            let context = context_pool.and_then(|pool| {
                // hidden positives always show their context in the primary field
                let force = is_primary && matches!(kind, Kind::Hidden(_));
                (force || rng.gen_bool(CONTEXT_PROB)).then(|| pick(&mut rng, pool))
            });
            let planted = if is_primary { phrase.as_deref() } else { None };
            fields[f.index()] = field_text(&mut rng, &vocab, context, planted);
        }
        let domain = match true_category {
            Some(c) if rng.gen_bool(TOPICAL_DOMAIN_PROB) => {
                pick(&mut rng, &vocab.topical_domains[c as usize - 1]).to_owned()
            }
            _ => pick(&mut rng, &vocab.general_domains).to_owned(),
        };
        let [anchor_text, alt_text, page_title, surrounding_text] = fields;
        items.push(WebDataItem {
            image_ref: format!("https://{domain}/images/{id}.jpg"),
            item_id: id.clone(),
            anchor_text,
            alt_text,
            page_title,
            surrounding_text,
            domain,
        });
        truth.push(TruthEntry {
            id,
            true_category,
            planted: planted_category
                .map(|category| PlantedMatch {
                    category,
                    field: primary,
                })
                .into_iter()
                .collect(),
        });
    }
    Ok(SyntheticCorpus {
        config: config.clone(),
        items,
        lexicon,
        truth: GroundTruth::new(truth),
    })
}
