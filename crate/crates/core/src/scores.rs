//! Visual confidence scores and the three score-driven stages: labeling an
//! unlabeled pool, filtering a labeled set, and collecting likely noise.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::UnlabeledImageRef;
use crate::dataset::{LabeledDataset, LabeledImage, Provenance};
use crate::error::{check_unit, Error, Result};
use crate::hashing::{fnv1a_extend, mix64, unit_open, FNV_OFFSET_BASIS};
use crate::jsonl::{RecordReader, RecordWriter};

/// Identifies an image to a provider, which may key on either field.
#[derive(Debug, Clone, Copy)]
pub struct ImageKey<'a> {
    pub item_id: &'a str,
    pub image_ref: &'a str,
}

impl<'a> From<&'a LabeledImage> for ImageKey<'a> {
    fn from(img: &'a LabeledImage) -> Self {
        ImageKey {
            item_id: &img.item_id,
            image_ref: &img.image_ref,
        }
    }
}

impl<'a> From<&'a UnlabeledImageRef> for ImageKey<'a> {
    fn from(img: &'a UnlabeledImageRef) -> Self {
        ImageKey {
            item_id: &img.item_id,
            image_ref: &img.image_ref,
        }
    }
}

/// Per-category visual confidence in `[0, 1]`.
///
/// `None` means the score is unknown. Implementations must be deterministic
/// and safe to query from many threads.
pub trait ScoreProvider: Sync {
    fn score(&self, image: ImageKey<'_>, category: u32) -> Option<f64>;
}

impl<P: ScoreProvider + ?Sized> ScoreProvider for &P {
    fn score(&self, image: ImageKey<'_>, category: u32) -> Option<f64> {
        (**self).score(image, category)
    }
}

/// One line of a score file. Either key may identify the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    pub category: u32,
    pub score: f64,
}

pub fn parse_score(line: &str) -> std::result::Result<ScoreEntry, String> {
    let e: ScoreEntry = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if e.id.as_deref().unwrap_or("").is_empty() && e.image_ref.as_deref().unwrap_or("").is_empty() {
        return Err("entry has neither id nor image_ref".into());
    }
    if e.category == 0 {
        return Err("category ids start at 1".into());
    }
    if !(0.0..=1.0).contains(&e.score) {
        return Err(format!("score {} outside [0,1]", e.score));
    }
    Ok(e)
}

/// File-backed table of precomputed scores. Lookups try the item id first,
/// then the image locator.
#[derive(Debug, Default, Clone)]
pub struct ScoreTable {
    by_id: HashMap<String, HashMap<u32, f64>>,
    by_ref: HashMap<String, HashMap<u32, f64>>,
}

impl ScoreTable {
    pub fn from_entries(entries: impl IntoIterator<Item = ScoreEntry>) -> Self {
        let mut table = ScoreTable::default();
        for e in entries {
            if let Some(id) = e.id.filter(|s| !s.is_empty()) {
                table
                    .by_id
                    .entry(id)
                    .or_default()
                    .insert(e.category, e.score);
            }
            if let Some(r) = e.image_ref.filter(|s| !s.is_empty()) {
                table
                    .by_ref
                    .entry(r)
                    .or_default()
                    .insert(e.category, e.score);
            }
        }
        table
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let entries = RecordReader::open(path, parse_score)?.collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable::from_entries(entries))
    }
}

impl ScoreProvider for ScoreTable {
    fn score(&self, image: ImageKey<'_>, category: u32) -> Option<f64> {
        self.by_id
            .get(image.item_id)
            .and_then(|m| m.get(&category))
            .or_else(|| {
                self.by_ref
                    .get(image.image_ref)
                    .and_then(|m| m.get(&category))
            })
            .copied()
    }
}

pub fn write_scores<'a>(
    path: impl AsRef<Path>,
    entries: impl IntoIterator<Item = &'a ScoreEntry>,
) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    for e in entries {
        w.write(e)?;
    }
    w.finish()?;
    Ok(())
}

/// Controls the oracle score distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScoreParams {
    pub seed: u64,
    /// Separation of true-pair and noise-pair scores; 0 makes both uniform.
    pub sharpness: f64,
    /// Probability that a pair draws from the opposite distribution.
    pub flip_prob: f64,
}

impl Default for SyntheticScoreParams {
    fn default() -> Self {
        SyntheticScoreParams {
            seed: 0,
            sharpness: 2.0,
            flip_prob: 0.0,
        }
    }
}

fn pair_bits(seed: u64, salt: u64, item_id: &str, category: u32) -> u64 {
    let mut h = fnv1a_extend(FNV_OFFSET_BASIS, &seed.to_le_bytes());
    h = fnv1a_extend(h, &salt.to_le_bytes());
    h = fnv1a_extend(h, item_id.as_bytes());
    h = fnv1a_extend(h, &[0xff]);
    h = fnv1a_extend(h, &category.to_le_bytes());
    mix64(h)
}

/// Deterministic oracle score for one pair.
///
/// With `u` uniform on (0,1) and `k = exp(sharpness)`, a noise pair scores
/// `u^k` and a true pair `1 - u^k`; `flip_prob` swaps the two.
pub fn synthetic_score(
    params: &SyntheticScoreParams,
    item_id: &str,
    category: u32,
    is_true: bool,
) -> f64 {
    let u = unit_open(pair_bits(params.seed, 0, item_id, category));
    let flip = unit_open(pair_bits(params.seed, 1, item_id, category)) < params.flip_prob;
    let low = u.powf(params.sharpness.exp());
    if is_true != flip {
        1.0 - low
    } else {
        low
    }
}

/// Scores derived from a ground-truth category per item.
#[derive(Debug, Clone)]
pub struct SyntheticScores {
    truth: HashMap<String, Option<u32>>,
    params: SyntheticScoreParams,
}

impl SyntheticScores {
    pub fn new(truth: HashMap<String, Option<u32>>, params: SyntheticScoreParams) -> Self {
        SyntheticScores { truth, params }
    }
}

impl ScoreProvider for SyntheticScores {
    fn score(&self, image: ImageKey<'_>, category: u32) -> Option<f64> {
        let truth = self.truth.get(image.item_id)?;
        Some(synthetic_score(
            &self.params,
            image.item_id,
            category,
            *truth == Some(category),
        ))
    }
}

/// The three visual thresholds: `alpha` for the web-filtered set,
/// `alpha_prime` for classifier-labeled pairs and `beta` for noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdConfig {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub beta: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            alpha: 0.1,
            alpha_prime: 0.01,
            beta: 0.01,
        }
    }
}

impl ThresholdConfig {
    /// Ratio bounding `beta` from above: `beta <= alpha / BETA_RATIO`.
    pub const BETA_RATIO: f64 = 5.0;

    pub fn validate(&self) -> Result<()> {
        check_unit("alpha", self.alpha)?;
        check_unit("alpha_prime", self.alpha_prime)?;
        check_unit("beta", self.beta)?;
        if self.alpha_prime >= self.alpha {
            return Err(Error::Thresholds(format!(
                "alpha_prime ({}) must be below alpha ({})",
                self.alpha_prime, self.alpha
            )));
        }
        if self.beta > self.alpha / Self::BETA_RATIO {
            return Err(Error::Thresholds(format!(
                "beta ({}) must be at most alpha/5 ({})",
                self.beta,
                self.alpha / Self::BETA_RATIO
            )));
        }
        Ok(())
    }
}

/// Bookkeeping for a score-driven stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub kept: usize,
    pub rejected: usize,
    pub unknown: usize,
}

impl ScoreReport {
    fn add(self, other: ScoreReport) -> ScoreReport {
        ScoreReport {
            kept: self.kept + other.kept,
            rejected: self.rejected + other.rejected,
            unknown: self.unknown + other.unknown,
        }
    }
}

pub const DCNN_DATASET: &str = "E_V";
pub const WEB_FILTERED_DATASET: &str = "E_VTweb";
pub const NOISE_DATASET: &str = "N_VTweb";
pub const TEXTCLF_FILTERED_DATASET: &str = "E_VTweb+";

/// Labels an unlabeled pool: every `(image, category)` with score `>= alpha`.
pub fn label_by_dcnn<P: ScoreProvider + ?Sized>(
    unlabeled: &[UnlabeledImageRef],
    provider: &P,
    alpha: f64,
    num_categories: u32,
) -> Result<(LabeledDataset, ScoreReport)> {
    check_unit("alpha", alpha)?;
    let (items, report) = unlabeled
        .par_iter()
        .map(|img| {
            let mut kept = Vec::new();
            let mut report = ScoreReport::default();
            for category in 1..=num_categories {
                match provider.score(img.into(), category) {
                    None => report.unknown += 1,
                    Some(s) if s >= alpha => {
                        report.kept += 1;
                        kept.push(LabeledImage::new(
                            img.item_id.clone(),
                            img.image_ref.clone(),
                            category,
                            Some(s),
                            Provenance::Dcnn,
                        ));
                    }
                    Some(_) => report.rejected += 1,
                }
            }
            (kept, report)
        })
        .reduce(
            || (Vec::new(), ScoreReport::default()),
            |(mut a, ra), (b, rb)| {
                a.extend(b);
                (a, ra.add(rb))
            },
        );
    Ok((LabeledDataset::new(DCNN_DATASET, items), report))
}

fn select<P: ScoreProvider + ?Sized>(
    dataset: &LabeledDataset,
    provider: &P,
    keep: impl Fn(f64) -> bool + Sync,
    provenance: Provenance,
    name: &str,
) -> (LabeledDataset, ScoreReport) {
    let scored: Vec<(Option<f64>, &LabeledImage)> = dataset
        .items()
        .par_iter()
        .map(|img| (provider.score(img.into(), img.category_id), img))
        .collect();
    let mut report = ScoreReport::default();
    let mut out = Vec::new();
    for (score, img) in scored {
        match score {
            None => report.unknown += 1,
            Some(s) if keep(s) => {
                report.kept += 1;
                out.push(LabeledImage::new(
                    img.item_id.clone(),
                    img.image_ref.clone(),
                    img.category_id,
                    Some(s),
                    provenance,
                ));
            }
            Some(_) => report.rejected += 1,
        }
    }
    (LabeledDataset::new(name, out), report)
}

/// Keeps the pairs whose score for their own category is `>= threshold`.
///
/// `provenance` is [`Provenance::WebFiltered`] when filtering `E_T` and
/// [`Provenance::TextclfFiltered`] when filtering classifier output.
pub fn filter_by_confidence<P: ScoreProvider + ?Sized>(
    dataset: &LabeledDataset,
    provider: &P,
    threshold: f64,
    provenance: Provenance,
) -> Result<(LabeledDataset, ScoreReport)> {
    check_unit("threshold", threshold)?;
    let name = match provenance {
        Provenance::TextclfFiltered => TEXTCLF_FILTERED_DATASET,
        _ => WEB_FILTERED_DATASET,
    };
    Ok(select(
        dataset,
        provider,
        |s| s >= threshold,
        provenance,
        name,
    ))
}

/// Pairs whose score is strictly below `beta`; unknown scores are not noise.
pub fn collect_noise<P: ScoreProvider + ?Sized>(
    dataset: &LabeledDataset,
    provider: &P,
    beta: f64,
) -> Result<(LabeledDataset, ScoreReport)> {
    check_unit("beta", beta)?;
    Ok(select(
        dataset,
        provider,
        |s| s < beta,
        Provenance::WebNoise,
        NOISE_DATASET,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, u32, f64)]) -> ScoreTable {
        ScoreTable::from_entries(entries.iter().map(|(id, c, s)| ScoreEntry {
            id: Some((*id).into()),
            image_ref: None,
            category: *c,
            score: *s,
        }))
    }

    fn web(pairs: &[(&str, u32)]) -> LabeledDataset {
        LabeledDataset::new(
            "E_T",
            pairs
                .iter()
                .map(|(id, c)| {
                    LabeledImage::new(*id, format!("u/{id}"), *c, None, Provenance::WebMatch)
                })
                .collect(),
        )
    }

    fn pool(ids: &[&str]) -> Vec<UnlabeledImageRef> {
        ids.iter()
            .map(|id| UnlabeledImageRef {
                item_id: (*id).into(),
                image_ref: format!("u/{id}"),
            })
            .collect()
    }

    #[test]
    fn dcnn_alpha_zero_keeps_every_scored_pair() {
        let t = table(&[("a", 1, 0.0), ("a", 2, 0.4), ("b", 1, 1.0)]);
        let (ds, rep) = label_by_dcnn(&pool(&["a", "b"]), &t, 0.0, 2).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(
            rep,
            ScoreReport {
                kept: 3,
                rejected: 0,
                unknown: 1
            }
        );
        assert!(ds
            .items()
            .iter()
            .all(|i| i.provenance == Provenance::Dcnn.into()));
    }

    #[test]
    fn dcnn_alpha_bounds() {
        let t = table(&[("a", 1, 1.0), ("a", 2, 0.999999)]);
        assert!(label_by_dcnn(&pool(&["a"]), &t, 1.0 + 1e-9, 2).is_err());
        let (ds, _) = label_by_dcnn(&pool(&["a"]), &t, 1.0, 2).unwrap();
        assert_eq!(ds.pairs().into_iter().collect::<Vec<_>>(), [(1, "a")]);
    }

    #[test]
    fn filter_threshold_zero_is_identity_with_confidence() {
        let d = web(&[("a", 1), ("b", 2)]);
        let t = table(&[("a", 1, 0.0), ("b", 2, 0.3)]);
        let (out, _) = filter_by_confidence(&d, &t, 0.0, Provenance::WebFiltered).unwrap();
        assert_eq!(out.pairs(), d.pairs());
        assert!(out.items().iter().all(|i| i.confidence.is_some()));
        assert_eq!(out.name(), WEB_FILTERED_DATASET);
    }

    #[test]
    fn filter_boundary_and_unknown() {
        let d = web(&[("a", 1), ("b", 1), ("c", 1)]);
        let t = table(&[("a", 1, 0.09), ("b", 1, 0.1)]);
        let (out, rep) = filter_by_confidence(&d, &t, 0.1, Provenance::WebFiltered).unwrap();
        assert_eq!(out.pairs().into_iter().collect::<Vec<_>>(), [(1, "b")]);
        assert_eq!(
            rep,
            ScoreReport {
                kept: 1,
                rejected: 1,
                unknown: 1
            }
        );
    }

    #[test]
    fn filter_uses_own_category_score() {
        let d = web(&[("a", 2)]);
        let t = table(&[("a", 1, 0.99), ("a", 2, 0.01)]);
        let (out, _) = filter_by_confidence(&d, &t, 0.5, Provenance::WebFiltered).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn noise_is_strict_and_skips_unknown() {
        let d = web(&[("a", 1), ("b", 1), ("c", 1)]);
        let t = table(&[("a", 1, 0.0), ("b", 1, 0.01)]);
        let (none, _) = collect_noise(&d, &t, 0.0).unwrap();
        assert!(none.is_empty());
        let (out, rep) = collect_noise(&d, &t, 0.01).unwrap();
        assert_eq!(out.pairs().into_iter().collect::<Vec<_>>(), [(1, "a")]);
        assert_eq!(rep.unknown, 1);
        assert!(out
            .items()
            .iter()
            .all(|i| i.provenance == Provenance::WebNoise.into()));
    }

    #[test]
    fn every_pair_lands_in_one_band() {
        let pairs: Vec<(String, u32)> = (0..50).map(|i| (format!("i{i}"), 1 + i % 3)).collect();
        let refs: Vec<(&str, u32)> = pairs.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        let d = web(&refs);
        let entries: Vec<(&str, u32, f64)> = refs
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 7 != 0)
            .map(|(i, (id, c))| (*id, *c, (i as f64 / 50.0)))
            .collect();
        let t = table(&entries);
        let cfg = ThresholdConfig::default();
        let (hi, _) = filter_by_confidence(&d, &t, cfg.alpha, Provenance::WebFiltered).unwrap();
        let (lo, _) = collect_noise(&d, &t, cfg.beta).unwrap();
        for img in d.items() {
            let key = ImageKey::from(img);
            let in_hi = hi.contains(&img.item_id, img.category_id);
            let in_lo = lo.contains(&img.item_id, img.category_id);
            let unknown = t.score(key, img.category_id).is_none();
            let middle = !in_hi && !in_lo && !unknown;
            assert_eq!(
                [in_hi, in_lo, middle, unknown]
                    .iter()
                    .filter(|b| **b)
                    .count(),
                1
            );
        }
    }

    #[test]
    fn table_falls_back_to_image_ref() {
        let t = ScoreTable::from_entries([ScoreEntry {
            id: None,
            image_ref: Some("http://img".into()),
            category: 3,
            score: 0.5,
        }]);
        let key = ImageKey {
            item_id: "x",
            image_ref: "http://img",
        };
        assert_eq!(t.score(key, 3), Some(0.5));
        assert_eq!(t.score(key, 2), None);
    }

    #[test]
    fn score_lines_validated() {
        assert!(parse_score(r#"{"id":"a","category":1,"score":0.5}"#).is_ok());
        assert!(parse_score(r#"{"image_ref":"u","category":1,"score":1}"#).is_ok());
        assert!(parse_score(r#"{"category":1,"score":0.5}"#).is_err());
        assert!(parse_score(r#"{"id":"a","category":1,"score":1.01}"#).is_err());
        assert!(parse_score(r#"{"id":"a","category":0,"score":0.1}"#).is_err());
    }

    #[test]
    fn thresholds_validated() {
        assert!(ThresholdConfig::default().validate().is_ok());
        let bad = |a, ap, b| {
            ThresholdConfig {
                alpha: a,
                alpha_prime: ap,
                beta: b,
            }
            .validate()
            .is_err()
        };
        assert!(bad(1.5, 0.01, 0.01));
        assert!(bad(0.1, 0.1, 0.01));
        assert!(bad(0.1, 0.01, 0.05));
        assert!(!bad(0.5, 0.2, 0.1));
    }

    #[test]
    fn synthetic_scores_deterministic_and_separated() {
        let p = SyntheticScoreParams {
            seed: 3,
            sharpness: 2.0,
            flip_prob: 0.0,
        };
        assert_eq!(
            synthetic_score(&p, "x", 4, true),
            synthetic_score(&p, "x", 4, true)
        );
        let n = 4000;
        let mean = |t: bool| {
            (0..n)
                .map(|i| synthetic_score(&p, &format!("i{i}"), 1, t))
                .sum::<f64>()
                / n as f64
        };
        let (mt, mn) = (mean(true), mean(false));
        assert!(mt > 0.8 && mn < 0.2, "{mt} {mn}");
        let all_flip = SyntheticScoreParams {
            flip_prob: 1.0,
            ..p
        };
        assert_eq!(
            synthetic_score(&all_flip, "x", 1, true),
            synthetic_score(&p, "x", 1, false)
        );
    }
}
