use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{DomainVocab, LabeledText, DEFAULT_BUCKETS, NUM_FIELD_TYPES};
use super::model::TextClassifier;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Initial learning rate; step `s` of `S` uses `lr0 * (1 - s / S)`.
    pub lr0: f64,
    pub epochs: usize,
    /// Supplied by the caller, never read from config files.
    #[serde(skip)]
    pub seed: u64,
    pub dim: usize,
    pub buckets: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.5,
            epochs: 5,
            seed: 0,
            dim: 10,
            buckets: DEFAULT_BUCKETS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "lr0 must be finite and non-negative, got {}",
                self.lr0
            )));
        }
        if self.dim == 0 || self.buckets == 0 {
            return Err(Error::Config("dim and buckets must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return self.lr0;
        }
        (self.lr0 * (1.0 - step as f64 / total_steps as f64)).max(0.0)
    }
}

/// Mean training loss before training (index 0) and after each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epoch_loss: Vec<f64>,
}

/// Mean loss over `examples`, summed in a fixed order.
pub fn mean_loss(model: &TextClassifier, examples: &[LabeledText]) -> Result<f64> {
    let losses = examples
        .par_iter()
        .map(|e| model.example_loss(e))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / examples.len() as f64)
}

/// Trains on positives (labels `1..=C`) and noise examples (label `C+1`).
///
/// Updates are applied one example at a time in a seeded shuffle order, so
/// the result is bit-identical for a given seed.
pub fn train(
    positives: &[LabeledText],
    negatives: &[LabeledText],
    num_categories: u32,
    vocab: DomainVocab,
    config: &TrainConfig,
) -> Result<(TextClassifier, TrainTrace)> {
    config.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyTrainingSet("T+"));
    }
    if negatives.is_empty() {
        return Err(Error::EmptyTrainingSet("T-"));
    }
    let noise = num_categories + 1;
    for ex in positives {
        if ex.label == 0 || ex.label > num_categories {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                max: num_categories,
            });
        }
    }
    if let Some(ex) = negatives.iter().find(|ex| ex.label != noise) {
        return Err(Error::LabelOutOfRange {
            label: ex.label,
            max: noise,
        });
    }
    let domains = vocab.size() as u32;
    for ex in positives.iter().chain(negatives) {
        let f = &ex.features;
        if f.bigram_ids.iter().any(|&b| b >= config.buckets)
            || f.type_id as usize >= NUM_FIELD_TYPES
            || f.domain_id >= domains
        {
            return Err(Error::Model(format!(
                "features out of range for {} buckets and {domains} domain ids",
                config.buckets
            )));
        }
    }

    let examples: Vec<LabeledText> = positives.iter().chain(negatives).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model =
        TextClassifier::initialized(config.buckets, vocab, num_categories, config.dim, &mut rng);

    let mut trace = vec![mean_loss(&model, &examples)?];
    let total_steps = config.epochs * examples.len();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let lr = config.learning_rate(step, total_steps);
            model.sgd_step(&examples[idx], lr)?;
            step += 1;
        }
        let loss = mean_loss(&model, &examples)?;
        log::debug!("epoch {}: mean loss {:.6}", epoch + 1, loss);
        trace.push(loss);
    }
    Ok((model, TrainTrace { epoch_loss: trace }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textclf::features::TextFeatures;

    fn ex(bigrams: &[u32], label: u32) -> LabeledText {
        LabeledText {
            features: TextFeatures {
                bigram_ids: bigrams.to_vec(),
                type_id: 0,
                domain_id: 0,
            },
            label,
        }
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr0: 0.5,
            epochs: 3,
            seed: 11,
            dim: 4,
            buckets: 16,
        }
    }

    #[test]
    fn lr_schedule_decays_linearly() {
        let c = TrainConfig { lr0: 0.4, ..cfg() };
        assert_eq!(c.learning_rate(0, 10), 0.4);
        assert!((c.learning_rate(5, 10) - 0.2).abs() < 1e-15);
        assert_eq!(c.learning_rate(10, 10), 0.0);
    }

    #[test]
    fn empty_sets_are_fatal() {
        let v = DomainVocab::default();
        assert!(matches!(
            train(&[], &[ex(&[1], 3)], 2, v.clone(), &cfg()),
            Err(Error::EmptyTrainingSet("T+"))
        ));
        assert!(matches!(
            train(&[ex(&[1], 1)], &[], 2, v, &cfg()),
            Err(Error::EmptyTrainingSet("T-"))
        ));
    }

    #[test]
    fn negatives_must_carry_noise_label() {
        let v = DomainVocab::default();
        assert!(train(&[ex(&[1], 1)], &[ex(&[2], 2)], 2, v, &cfg()).is_err());
    }

    #[test]
    fn out_of_range_features_are_rejected() {
        let c = TrainConfig {
            buckets: 4,
            ..cfg()
        };
        let err = train(
            &[ex(&[9], 1)],
            &[ex(&[0], 3)],
            2,
            DomainVocab::default(),
            &c,
        );
        assert!(matches!(err, Err(Error::Model(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_initialization() {
        let v = DomainVocab::default();
        let c = TrainConfig { lr0: 0.0, ..cfg() };
        let (m, trace) = train(
            &[ex(&[1], 1), ex(&[2], 2)],
            &[ex(&[3], 3)],
            2,
            v.clone(),
            &c,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let init = TextClassifier::initialized(c.buckets, v, 2, c.dim, &mut rng);
        assert_eq!(m, init);
        assert!(trace.epoch_loss.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let pos: Vec<_> = (0..30)
            .map(|i| ex(&[i % 5, 5 + i % 3], 1 + i % 2))
            .collect();
        let neg: Vec<_> = (0..20).map(|i| ex(&[10 + i % 4], 3)).collect();
        let v = DomainVocab::default();
        let (a, ta) = train(&pos, &neg, 2, v.clone(), &cfg()).unwrap();
        let (b, tb) = train(&pos, &neg, 2, v, &cfg()).unwrap();
        let bits = |m: &TextClassifier| {
            m.embeddings()
                .iter()
                .chain(m.output())
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(ta, tb);
    }
}
