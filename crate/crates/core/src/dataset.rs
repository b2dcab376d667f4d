//! Labeled `(image, category)` pairs and the datasets built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Result;
use crate::jsonl::RecordReader;

/// Stage that produced a labeled pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    WebMatch,
    Dcnn,
    WebFiltered,
    WebNoise,
    Textclf,
    TextclfFiltered,
}

impl Provenance {
    const ALL: [Provenance; 6] = [
        Provenance::WebMatch,
        Provenance::Dcnn,
        Provenance::WebFiltered,
        Provenance::WebNoise,
        Provenance::Textclf,
        Provenance::TextclfFiltered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::WebMatch => "web_match",
            Provenance::Dcnn => "dcnn",
            Provenance::WebFiltered => "web_filtered",
            Provenance::WebNoise => "web_noise",
            Provenance::Textclf => "textclf",
            Provenance::TextclfFiltered => "textclf_filtered",
        }
    }

    /// Whether a pair with this provenance must carry a confidence score.
    pub fn is_scored(self) -> bool {
        matches!(
            self,
            Provenance::Dcnn
                | Provenance::WebFiltered
                | Provenance::WebNoise
                | Provenance::TextclfFiltered
        )
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Non-empty set of provenances; a union of two stages records both.
/// Serialized as names joined by `+`, e.g. `web_filtered+textclf_filtered`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProvenanceSet(u8);

impl ProvenanceSet {
    pub fn contains(self, p: Provenance) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn union(self, other: ProvenanceSet) -> ProvenanceSet {
        ProvenanceSet(self.0 | other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Provenance> {
        Provenance::ALL
            .into_iter()
            .filter(move |p| self.contains(*p))
    }

    pub fn is_scored(self) -> bool {
        self.iter().any(Provenance::is_scored)
    }
}

impl From<Provenance> for ProvenanceSet {
    fn from(p: Provenance) -> Self {
        ProvenanceSet(p.bit())
    }
}

impl fmt::Display for ProvenanceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.iter().enumerate() {
            if i > 0 {
                f.write_str("+")?;
            }
            f.write_str(p.as_str())?;
        }
        Ok(())
    }
}

impl std::str::FromStr for ProvenanceSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut bits = 0u8;
        for part in s.split('+') {
            let p = Provenance::ALL
                .into_iter()
                .find(|p| p.as_str() == part)
                .ok_or_else(|| format!("unknown provenance {part:?}"))?;
            bits |= p.bit();
        }
        Ok(ProvenanceSet(bits))
    }
}

impl Serialize for ProvenanceSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProvenanceSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledImage {
    #[serde(rename = "id")]
    pub item_id: String,
    pub image_ref: String,
    #[serde(rename = "category")]
    pub category_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub provenance: ProvenanceSet,
}

impl LabeledImage {
    pub fn new(
        item_id: impl Into<String>,
        image_ref: impl Into<String>,
        category_id: u32,
        confidence: Option<f64>,
        provenance: Provenance,
    ) -> Self {
        LabeledImage {
            item_id: item_id.into(),
            image_ref: image_ref.into(),
            category_id,
            confidence,
            provenance: provenance.into(),
        }
    }

    fn key(&self) -> (u32, &str) {
        (self.category_id, self.item_id.as_str())
    }
}

pub fn parse_labeled(line: &str) -> std::result::Result<LabeledImage, String> {
    let img: LabeledImage = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if img.item_id.is_empty() {
        return Err("missing id".into());
    }
    if img.category_id == 0 {
        return Err("category ids start at 1".into());
    }
    if let Some(c) = img.confidence {
        if !(0.0..=1.0).contains(&c) {
            return Err(format!("confidence {c} outside [0,1]"));
        }
    }
    if img.provenance.is_scored() && img.confidence.is_none() {
        return Err(format!(
            "provenance {} requires a confidence",
            img.provenance
        ));
    }
    Ok(img)
}

/// A named set of labeled pairs, unique on `(item_id, category_id)` and kept
/// sorted by `(category_id, item_id)` so output never depends on the order
/// in which workers produced it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    name: String,
    items: Vec<LabeledImage>,
}

impl LabeledDataset {
    /// Builds a dataset, merging repeated pairs the way [`union`] does.
    ///
    /// [`union`]: crate::pipeline::union
    pub fn new(name: impl Into<String>, mut items: Vec<LabeledImage>) -> Self {
        items.sort_by(|a, b| a.key().cmp(&b.key()));
        let mut merged: Vec<LabeledImage> = Vec::with_capacity(items.len());
        for img in items {
            match merged.last_mut() {
                Some(last) if last.key() == img.key() => merge_into(last, img),
                _ => merged.push(img),
            }
        }
        LabeledDataset {
            name: name.into(),
            items: merged,
        }
    }

    pub fn empty(name: impl Into<String>) -> Self {
        LabeledDataset {
            name: name.into(),
            items: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn into_items(self) -> Vec<LabeledImage> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item_id: &str, category_id: u32) -> Option<&LabeledImage> {
        self.items
            .binary_search_by(|img| img.key().cmp(&(category_id, item_id)))
            .ok()
            .map(|idx| &self.items[idx])
    }

    pub fn contains(&self, item_id: &str, category_id: u32) -> bool {
        self.get(item_id, category_id).is_some()
    }

    pub fn pairs(&self) -> BTreeSet<(u32, &str)> {
        self.items.iter().map(LabeledImage::key).collect()
    }

    pub fn item_ids(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.item_id.as_str()).collect()
    }

    /// Every pair of `self` is also a pair of `other`.
    pub fn is_subset_of(&self, other: &LabeledDataset) -> bool {
        self.items
            .iter()
            .all(|img| other.contains(&img.item_id, img.category_id))
    }

    pub fn is_disjoint_from(&self, other: &LabeledDataset) -> bool {
        self.items
            .iter()
            .all(|img| !other.contains(&img.item_id, img.category_id))
    }

    pub fn category_counts(&self) -> BTreeMap<u32, usize> {
        let mut counts = BTreeMap::new();
        for img in &self.items {
            *counts.entry(img.category_id).or_insert(0) += 1;
        }
        counts
    }

    /// Items grouped by category, in dataset order.
    pub fn by_category(&self) -> BTreeMap<u32, Vec<&LabeledImage>> {
        let mut groups: BTreeMap<u32, Vec<&LabeledImage>> = BTreeMap::new();
        for img in &self.items {
            groups.entry(img.category_id).or_default().push(img);
        }
        groups
    }

    pub fn read(path: impl AsRef<Path>, name: impl Into<String>) -> Result<Self> {
        let items = RecordReader::open(path, parse_labeled)?.collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset::new(name, items))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::jsonl::write_all(path, &self.items)
    }
}

/// Keeps the higher confidence and records both provenances.
pub(crate) fn merge_into(target: &mut LabeledImage, other: LabeledImage) {
    target.confidence = match (target.confidence, other.confidence) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    target.provenance = target.provenance.union(other.provenance);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provenance_text_round_trip() {
        let set =
            ProvenanceSet::from(Provenance::TextclfFiltered).union(Provenance::WebFiltered.into());
        assert_eq!(set.to_string(), "web_filtered+textclf_filtered");
        assert_eq!(set.to_string().parse::<ProvenanceSet>().unwrap(), set);
        assert!("bogus".parse::<ProvenanceSet>().is_err());
    }

    #[test]
    fn new_sorts_and_merges() {
        let ds = LabeledDataset::new(
            "x",
            vec![
                LabeledImage::new("b", "u", 2, Some(0.2), Provenance::WebFiltered),
                LabeledImage::new("a", "u", 2, None, Provenance::WebMatch),
                LabeledImage::new("b", "u", 2, Some(0.7), Provenance::TextclfFiltered),
                LabeledImage::new("z", "u", 1, None, Provenance::WebMatch),
            ],
        );
        let keys: Vec<_> = ds.pairs().into_iter().collect();
        assert_eq!(keys, [(1, "z"), (2, "a"), (2, "b")]);
        let b = ds.get("b", 2).unwrap();
        assert_eq!(b.confidence, Some(0.7));
        assert!(b.provenance.contains(Provenance::WebFiltered));
        assert!(b.provenance.contains(Provenance::TextclfFiltered));
    }

    #[test]
    fn parse_rejects_bad_lines() {
        assert!(parse_labeled(
            r#"{"id":"a","image_ref":"u","category":1,"provenance":"web_match"}"#
        )
        .is_ok());
        assert!(parse_labeled(
            r#"{"id":"a","image_ref":"u","category":0,"provenance":"web_match"}"#
        )
        .is_err());
        assert!(parse_labeled(
            r#"{"id":"a","image_ref":"u","category":1,"confidence":1.5,"provenance":"dcnn"}"#
        )
        .is_err());
        assert!(
            parse_labeled(r#"{"id":"a","image_ref":"u","category":1,"provenance":"dcnn"}"#)
                .is_err()
        );
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let ds = LabeledDataset::new(
            "E_T",
            vec![
                LabeledImage::new("a", "u1", 1, None, Provenance::WebMatch),
                LabeledImage::new("b", "u2", 3, Some(0.123456789), Provenance::WebFiltered),
            ],
        );
        ds.write(&path).unwrap();
        assert_eq!(LabeledDataset::read(&path, "E_T").unwrap(), ds);
    }
}
