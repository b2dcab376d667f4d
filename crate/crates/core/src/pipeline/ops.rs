use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{expand_records, CorpusIndex, FieldType};
use crate::dataset::{LabeledDataset, LabeledImage};
use crate::error::{Error, Result};
use crate::evalkit::{exact_accuracy, Truth};
use crate::matcher::PhraseMatcher;
use crate::scores::ScoreProvider;
use crate::textclf::{
    featurize, train, DomainVocab, LabeledRecord, LabeledText, TextClassifier, TrainConfig,
    TrainTrace,
};

/// Pair-level union; shared pairs keep the higher confidence and both
/// provenances.
pub fn union(a: &LabeledDataset, b: &LabeledDataset) -> LabeledDataset {
    let items = a.items().iter().chain(b.items()).cloned().collect();
    LabeledDataset::new(format!("{}|{}", a.name(), b.name()), items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceCaps {
    pub hard_cap: usize,
    pub target_cap: usize,
}

impl BalanceCaps {
    pub fn validate(&self) -> Result<()> {
        if self.target_cap < 1 || self.hard_cap < self.target_cap {
            return Err(Error::Config(format!(
                "caps must satisfy hard_cap >= target_cap >= 1, got {} and {}",
                self.hard_cap, self.target_cap
            )));
        }
        Ok(())
    }
}

/// Per-category random generator, independent of the other categories.
fn category_rng(seed: u64, category: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(category as u64);
    rng
}

/// Picks `k` of `items` uniformly, keeping their original order.
fn subsample<'a>(
    items: Vec<&'a LabeledImage>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a LabeledImage> {
    if items.len() <= k {
        return items;
    }
    let mut picked = sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i]).collect()
}

/// Subsamples categories above `hard_cap` to `hard_cap`, then those above
/// `target_cap` to `target_cap`. Smaller categories pass through untouched.
pub fn balance(dataset: &LabeledDataset, caps: BalanceCaps, seed: u64) -> Result<LabeledDataset> {
    caps.validate()?;
    let mut kept = Vec::with_capacity(dataset.len());
    for (category, items) in dataset.by_category() {
        let mut rng = category_rng(seed, category);
        let capped = subsample(items, caps.hard_cap, &mut rng);
        let capped = subsample(capped, caps.target_cap, &mut rng);
        kept.extend(capped.into_iter().cloned());
    }
    Ok(LabeledDataset::new(dataset.name(), kept))
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Uniform bins on [0,1]; the last bin is closed.
    pub fn unit(bins: usize) -> Self {
        Histogram {
            edges: (0..=bins).map(|i| i as f64 / bins as f64).collect(),
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, value: f64) {
        let bins = self.counts.len();
        let bin = ((value * bins as f64) as usize).min(bins - 1);
        self.counts[bin] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: String,
    pub total: usize,
    pub category_counts: BTreeMap<u32, usize>,
    /// One credit per field that fires for the labeled category.
    pub field_credits: BTreeMap<FieldType, u64>,
    pub field_proportions: BTreeMap<FieldType, f64>,
    /// Pairs whose item is missing from the corpus or has no firing field.
    pub unattributed: usize,
    pub histogram: Option<Histogram>,
    pub unscored: usize,
}

/// Category counts, field attribution and an optional score histogram.
pub fn compute_stats(
    dataset: &LabeledDataset,
    index: &CorpusIndex,
    matcher: &PhraseMatcher,
    provider: Option<&dyn ScoreProvider>,
) -> DatasetStats {
    let credits: Vec<Option<[u64; 4]>> = dataset
        .items()
        .par_iter()
        .map(|img| {
            let item = index.get(&img.item_id)?;
            let mut fired = [0u64; 4];
            for (field, text) in item.fields() {
                if matcher.match_text(text).contains_key(&img.category_id) {
                    fired[field.index()] = 1;
                }
            }
            fired.iter().any(|&c| c > 0).then_some(fired)
        })
        .collect();
    let mut totals = [0u64; 4];
    let mut unattributed = 0;
    for c in &credits {
        match c {
            Some(fired) => totals.iter_mut().zip(fired).for_each(|(t, f)| *t += f),
            None => unattributed += 1,
        }
    }
    let sum: u64 = totals.iter().sum();
    let field_credits = FieldType::ALL
        .iter()
        .map(|&f| (f, totals[f.index()]))
        .collect();
    let field_proportions = FieldType::ALL
        .iter()
        .map(|&f| {
            let p = if sum == 0 {
                0.0
            } else {
                totals[f.index()] as f64 / sum as f64
            };
            (f, p)
        })
        .collect();

    let mut unscored = 0;
    let histogram = provider.map(|p| {
        let mut h = Histogram::unit(HISTOGRAM_BINS);
        for img in dataset.items() {
            match p.score(img.into(), img.category_id) {
                Some(s) => h.add(s),
                None => unscored += 1,
            }
        }
        h
    });
    DatasetStats {
        dataset: dataset.name().to_owned(),
        total: dataset.len(),
        category_counts: dataset.category_counts(),
        field_credits,
        field_proportions,
        unattributed,
        histogram,
        unscored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEstimate {
    /// Accuracy over the per-category sample; `None` for an empty dataset.
    pub sampled: Option<f64>,
    pub sample_size: usize,
    /// Full-population accuracy; `None` unless the truth covers every item.
    pub exact: Option<f64>,
}

/// Samples up to `per_category` pairs from each category and checks them
/// against the truth.
pub fn estimate_accuracy<T: Truth + ?Sized>(
    dataset: &LabeledDataset,
    truth: &T,
    per_category: usize,
    seed: u64,
) -> Result<AccuracyEstimate> {
    if per_category == 0 {
        return Err(Error::Config(
            "sample size per category must be positive".into(),
        ));
    }
    let mut correct = 0usize;
    let mut sampled = 0usize;
    for (category, items) in dataset.by_category() {
        let mut rng = category_rng(seed, category);
        for img in subsample(items, per_category, &mut rng) {
            let label = truth.true_category(&img.item_id).ok_or_else(|| {
                Error::Undefined(format!("no ground truth for sampled item {}", img.item_id))
            })?;
            sampled += 1;
            if label == Some(category) {
                correct += 1;
            }
        }
    }
    Ok(AccuracyEstimate {
        sampled: (sampled > 0).then(|| correct as f64 / sampled as f64),
        sample_size: sampled,
        exact: exact_accuracy(dataset, truth),
    })
}

/// Classifier training sets built from corpus text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TextSets {
    pub positives: Vec<LabeledRecord>,
    pub negatives: Vec<LabeledRecord>,
}

/// Every text record of each filtered pair, labeled with the pair's
/// category, and every text record of each noise item, labeled `C+1`.
///
/// With `negative_ratio`, negatives are subsampled to at most
/// `ratio * |positives|` records.
pub fn build_text_sets(
    filtered: &LabeledDataset,
    noise: &LabeledDataset,
    index: &CorpusIndex,
    num_categories: u32,
    negative_ratio: Option<f64>,
    seed: u64,
) -> Result<TextSets> {
    let records_of = |id: &str| {
        index
            .get(id)
            .map(expand_records)
            .ok_or_else(|| Error::Undefined(format!("item {id} is not in the corpus")))
    };
    let mut positives = Vec::new();
    for img in filtered.items() {
        for record in records_of(&img.item_id)? {
            positives.push(LabeledRecord {
                record,
                label: img.category_id,
            });
        }
    }
    let mut negatives = Vec::new();
    let mut seen = HashSet::new();
    for img in noise.items() {
        // an item noisy under several categories contributes its text once
        if seen.insert(img.item_id.as_str()) {
            for record in records_of(&img.item_id)? {
                negatives.push(LabeledRecord {
                    record,
                    label: num_categories + 1,
                });
            }
        }
    }
    if let Some(ratio) = negative_ratio {
        if !(ratio > 0.0 && ratio.is_finite()) {
            return Err(Error::Config(format!(
                "negative_ratio must be positive, got {ratio}"
            )));
        }
        let cap = (ratio * positives.len() as f64).ceil() as usize;
        if negatives.len() > cap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut keep = sample(&mut rng, negatives.len(), cap).into_vec();
            keep.sort_unstable();
            negatives = keep.into_iter().map(|i| negatives[i].clone()).collect();
        }
    }
    Ok(TextSets {
        positives,
        negatives,
    })
}

/// Builds the domain vocabulary from the training records, featurizes them
/// and trains the classifier.
pub fn train_from_records(
    sets: &TextSets,
    num_categories: u32,
    config: &TrainConfig,
) -> Result<(TextClassifier, TrainTrace)> {
    let all = sets.positives.iter().chain(&sets.negatives);
    let vocab = DomainVocab::build(all.map(|r| r.record.domain.as_str()));
    let featurized = |records: &[LabeledRecord]| -> Vec<LabeledText> {
        records
            .iter()
            .map(|r| LabeledText {
                features: featurize(&r.record, config.buckets, &vocab),
                label: r.label,
            })
            .collect()
    };
    let positives = featurized(&sets.positives);
    let negatives = featurized(&sets.negatives);
    train(
        &positives,
        &negatives,
        num_categories,
        vocab.clone(),
        config,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WebDataItem;
    use crate::dataset::Provenance;
    use crate::lexicon::{Category, Lexicon, Phrase};
    use crate::matcher::{build_automaton, MatchMode};

    fn img(id: &str, c: u32, conf: Option<f64>, p: Provenance) -> LabeledImage {
        LabeledImage::new(id, "", c, conf, p)
    }

    fn web(pairs: &[(&str, u32)]) -> LabeledDataset {
        LabeledDataset::new(
            "d",
            pairs
                .iter()
                .map(|(i, c)| img(i, *c, None, Provenance::WebMatch))
                .collect(),
        )
    }

    #[test]
    fn union_identity_and_idempotence() {
        let d = web(&[("a", 1), ("b", 2)]);
        assert_eq!(union(&d, &LabeledDataset::empty("e")).items(), d.items());
        assert_eq!(union(&d, &d).items(), d.items());
    }

    #[test]
    fn union_keeps_max_confidence_and_both_provenances() {
        let a = LabeledDataset::new("a", vec![img("x", 1, Some(0.4), Provenance::WebFiltered)]);
        let b = LabeledDataset::new(
            "b",
            vec![img("x", 1, Some(0.9), Provenance::TextclfFiltered)],
        );
        let u = union(&a, &b);
        assert_eq!(u.len(), 1);
        assert_eq!(u.items()[0].confidence, Some(0.9));
        assert_eq!(
            u.items()[0].provenance.to_string(),
            "web_filtered+textclf_filtered"
        );
    }

    #[test]
    fn balance_caps() {
        let ids: Vec<String> = (0..100).map(|i| format!("i{i:03}")).collect();
        let mut pairs: Vec<(&str, u32)> = ids.iter().map(|i| (i.as_str(), 1)).collect();
        pairs.push(("z", 2));
        let d = web(&pairs);
        let caps = BalanceCaps {
            hard_cap: 50,
            target_cap: 10,
        };
        let out = balance(&d, caps, 3).unwrap();
        assert_eq!(out.category_counts()[&1], 10);
        assert_eq!(out.category_counts()[&2], 1);
        assert!(out.is_subset_of(&d));
        assert_eq!(out, balance(&d, caps, 3).unwrap());
        assert_ne!(out, balance(&d, caps, 4).unwrap());
        let loose = BalanceCaps {
            hard_cap: 500,
            target_cap: 200,
        };
        assert_eq!(balance(&d, loose, 3).unwrap(), d);
        assert!(balance(
            &d,
            BalanceCaps {
                hard_cap: 5,
                target_cap: 10
            },
            0
        )
        .is_err());
        assert!(balance(
            &d,
            BalanceCaps {
                hard_cap: 5,
                target_cap: 0
            },
            0
        )
        .is_err());
    }

    #[test]
    fn histogram_bins() {
        let mut h = Histogram::unit(20);
        for v in [0.0, 0.049, 0.05, 0.999, 1.0] {
            h.add(v);
        }
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 2);
        assert_eq!(h.edges.len(), 21);
    }

    fn lexicon() -> Lexicon {
        Lexicon::new(vec![Category {
            id: 1,
            name: "tench".into(),
            phrases: vec![Phrase {
                text: "tench".into(),
                lang: "en".into(),
            }],
        }])
        .unwrap()
    }

    fn item(id: &str, alt: &str, title: &str) -> WebDataItem {
        WebDataItem {
            item_id: id.into(),
            image_ref: String::new(),
            anchor_text: String::new(),
            alt_text: alt.into(),
            page_title: title.into(),
            surrounding_text: "river".into(),
            domain: "fish.org".into(),
        }
    }

    #[test]
    fn stats_credit_every_firing_field() {
        let m = build_automaton(&lexicon(), MatchMode::WordBoundary);
        let index = CorpusIndex::new([item("a", "a tench", "tench"), item("b", "tench", "x")]);
        let d = web(&[("a", 1), ("b", 1), ("gone", 1)]);
        let s = compute_stats(&d, &index, &m, None);
        assert_eq!(s.field_credits[&FieldType::Alt], 2);
        assert_eq!(s.field_credits[&FieldType::Title], 1);
        assert_eq!(s.unattributed, 1);
        assert!((s.field_proportions[&FieldType::Alt] - 2.0 / 3.0).abs() < 1e-12);
        assert!(s.histogram.is_none());
    }

    #[test]
    fn empty_stats_are_zero() {
        let m = build_automaton(&lexicon(), MatchMode::WordBoundary);
        let table = crate::scores::ScoreTable::from_entries(Vec::new());
        let s = compute_stats(&web(&[]), &CorpusIndex::default(), &m, Some(&table));
        assert_eq!(s.total, 0);
        assert!(s.field_proportions.values().all(|&p| p == 0.0));
        assert_eq!(s.histogram.unwrap().total(), 0);
    }

    #[test]
    fn accuracy_estimates() {
        let truth: std::collections::HashMap<String, Option<u32>> = [
            ("a".into(), Some(1)),
            ("b".into(), Some(2)),
            ("c".into(), None),
        ]
        .into();
        let right = web(&[("a", 1), ("b", 2)]);
        let est = estimate_accuracy(&right, &truth, 10, 0).unwrap();
        assert_eq!((est.sampled, est.exact), (Some(1.0), Some(1.0)));
        let wrong = web(&[("a", 2), ("b", 1), ("c", 1)]);
        let est = estimate_accuracy(&wrong, &truth, 10, 0).unwrap();
        assert_eq!((est.sampled, est.exact), (Some(0.0), Some(0.0)));
        let est = estimate_accuracy(&web(&[]), &truth, 10, 0).unwrap();
        assert_eq!((est.sampled, est.exact), (None, None));
        assert!(estimate_accuracy(&web(&[("q", 1)]), &truth, 10, 0).is_err());
    }

    #[test]
    fn text_sets_labels_and_ratio() {
        let index = CorpusIndex::new([item("a", "a tench", "t"), item("n", "jay", "")]);
        let pos = web(&[("a", 1)]);
        let neg = web(&[("n", 1), ("n", 2)]);
        let sets = build_text_sets(&pos, &neg, &index, 2, None, 0).unwrap();
        assert_eq!(sets.positives.len(), 3);
        assert!(sets.positives.iter().all(|r| r.label == 1));
        assert_eq!(sets.negatives.len(), 2);
        assert!(sets.negatives.iter().all(|r| r.label == 3));
        let capped = build_text_sets(&pos, &neg, &index, 2, Some(0.3), 0).unwrap();
        assert_eq!(capped.negatives.len(), 1);
        assert!(build_text_sets(&web(&[("zz", 1)]), &neg, &index, 2, None, 0).is_err());
    }
}
