use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::TextRecord;
use crate::hashing::fnv1a;
use crate::lexicon::normalize_phrase;

pub const NUM_FIELD_TYPES: usize = 4;
pub const DEFAULT_BUCKETS: u32 = 1 << 20;

/// Domain strings mapped to dense ids. Id 0 is reserved for domains never
/// seen at training time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DomainVocab {
    ids: HashMap<String, u32>,
    domains: Vec<String>,
}

impl DomainVocab {
    pub const OOV: u32 = 0;

    /// Builds a vocabulary from distinct domains, in sorted order.
    pub fn build<'a>(domains: impl IntoIterator<Item = &'a str>) -> Self {
        let sorted: BTreeSet<&str> = domains.into_iter().collect();
        DomainVocab::from_ordered(sorted.into_iter().map(str::to_owned).collect())
            .expect("sorted set has no duplicates")
    }

    /// Restores a vocabulary whose ids follow list order, starting at 1.
    pub fn from_ordered(domains: Vec<String>) -> Option<Self> {
        let mut ids = HashMap::with_capacity(domains.len());
        for (idx, d) in domains.iter().enumerate() {
            if ids.insert(d.clone(), idx as u32 + 1).is_some() {
                return None;
            }
        }
        Some(DomainVocab { ids, domains })
    }

    pub fn id(&self, domain: &str) -> u32 {
        self.ids.get(domain).copied().unwrap_or(Self::OOV)
    }

    /// Number of domain ids, the out-of-vocabulary id included.
    pub fn size(&self) -> usize {
        self.domains.len() + 1
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }
}

/// Sparse input of the classifier: bigram buckets, field type and domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextFeatures {
    /// Multiset of bucket ids, one per bigram occurrence.
    pub bigram_ids: Vec<u32>,
    pub type_id: u8,
    pub domain_id: u32,
}

impl TextFeatures {
    pub fn n_bigrams(&self) -> usize {
        self.bigram_ids.len()
    }
}

/// Bucket of a token pair (or lone token): 64-bit FNV-1a of its UTF-8 bytes,
/// modulo the bucket count.
pub fn bigram_bucket(bigram: &str, buckets: u32) -> u32 {
    (fnv1a(bigram.as_bytes()) % u64::from(buckets)) as u32
}

/// Hashes consecutive whitespace-token pairs of the normalized text. A text
/// with a single token contributes that token alone.
pub fn featurize(record: &TextRecord, buckets: u32, vocab: &DomainVocab) -> TextFeatures {
    let text = normalize_phrase(&record.text);
    let tokens: Vec<&str> = text.split(' ').filter(|t| !t.is_empty()).collect();
    let bigram_ids = match tokens.len() {
        0 => Vec::new(),
        1 => vec![bigram_bucket(tokens[0], buckets)],
        _ => {
            let mut pair = String::new();
            tokens
                .windows(2)
                .map(|w| {
                    pair.clear();
                    pair.push_str(w[0]);
                    pair.push(' ');
                    pair.push_str(w[1]);
                    bigram_bucket(&pair, buckets)
                })
                .collect()
        }
    };
    TextFeatures {
        bigram_ids,
        type_id: record.field_type.index() as u8,
        domain_id: vocab.id(&record.domain),
    }
}

/// A text record with its training label in `1..=C+1`; `C+1` is noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub record: TextRecord,
    pub label: u32,
}

pub fn parse_labeled_record(line: &str) -> Result<LabeledRecord, String> {
    let r: LabeledRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if r.label == 0 {
        return Err("labels start at 1".into());
    }
    if r.record.text.is_empty() {
        return Err("empty text".into());
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledText {
    pub features: TextFeatures,
    pub label: u32,
}
