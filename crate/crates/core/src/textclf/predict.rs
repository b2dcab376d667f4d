use std::collections::BTreeMap;

use rayon::prelude::*;

use super::features::featurize;
use super::model::TextClassifier;
use crate::corpus::{expand_records, WebDataItem};
use crate::dataset::{LabeledDataset, LabeledImage, Provenance};
use crate::error::{Error, Result};
use crate::matcher::CHUNK;

pub const TEXTCLF_DATASET: &str = "E_Tweb+";
pub const DEFAULT_PREDICT_THRESHOLD: f64 = 0.5;

/// Categories (never the noise class) that any of the item's records gives
/// probability above `threshold`, each with its best probability.
pub fn predict_item(
    model: &TextClassifier,
    item: &WebDataItem,
    threshold: f64,
) -> BTreeMap<u32, f64> {
    let mut best: BTreeMap<u32, f64> = BTreeMap::new();
    for record in expand_records(item) {
        let features = featurize(&record, model.buckets(), model.vocab());
        let probs = model.forward(&features);
        for (idx, &p) in probs[..model.num_categories() as usize].iter().enumerate() {
            if p > threshold {
                let slot = best.entry(idx as u32 + 1).or_insert(p);
                *slot = slot.max(p);
            }
        }
    }
    best
}

/// Labels every corpus item with the classifier; the `E_Tweb+` dataset.
pub fn predict_label_set<I>(
    items: I,
    model: &TextClassifier,
    threshold: f64,
) -> Result<LabeledDataset>
where
    I: IntoIterator<Item = Result<WebDataItem>>,
{
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::OutOfRange {
            name: "threshold",
            value: threshold,
            range: "(0,1]",
        });
    }
    let mut out = Vec::new();
    let mut items = items.into_iter();
    let mut chunk = Vec::with_capacity(CHUNK);
    loop {
        chunk.clear();
        for item in items.by_ref().take(CHUNK) {
            chunk.push(item?);
        }
        if chunk.is_empty() {
            break;
        }
        let labeled: Vec<Vec<LabeledImage>> = chunk
            .par_iter()
            .map(|item| {
                predict_item(model, item, threshold)
                    .into_iter()
                    .map(|(category, p)| {
                        LabeledImage::new(
                            item.item_id.clone(),
                            item.image_ref.clone(),
                            category,
                            Some(p),
                            Provenance::Textclf,
                        )
                    })
                    .collect()
            })
            .collect();
        out.extend(labeled.into_iter().flatten());
    }
    Ok(LabeledDataset::new(TEXTCLF_DATASET, out))
}
