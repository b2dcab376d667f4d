use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::features::{DomainVocab, LabeledText, TextFeatures, NUM_FIELD_TYPES};
use crate::error::{Error, Result};

/// Bag-of-bigrams classifier over `C` categories plus a noise class.
///
/// `E` has one row per bigram bucket, field type and domain id, in that
/// order. The hidden vector averages the rows an example touches; `W` maps
/// it to `C + 1` logits, and class `C + 1` is noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TextClassifier {
    buckets: u32,
    vocab: DomainVocab,
    num_categories: u32,
    dim: usize,
    embeddings: Vec<f64>,
    output: Vec<f64>,
}

impl TextClassifier {
    /// All-zero model; predicts the uniform distribution.
    pub fn zeros(buckets: u32, vocab: DomainVocab, num_categories: u32, dim: usize) -> Self {
        assert!(
            buckets > 0 && num_categories > 0 && dim > 0,
            "model dimensions must be positive"
        );
        let rows = buckets as usize + NUM_FIELD_TYPES + vocab.size();
        TextClassifier {
            buckets,
            vocab,
            num_categories,
            dim,
            embeddings: vec![0.0; rows * dim],
            output: vec![0.0; (num_categories as usize + 1) * dim],
        }
    }

    /// `E` uniform in `[-1/dim, 1/dim]`, `W` zero.
    pub fn initialized(
        buckets: u32,
        vocab: DomainVocab,
        num_categories: u32,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut model = TextClassifier::zeros(buckets, vocab, num_categories, dim);
        let bound = 1.0 / dim as f64;
        for x in &mut model.embeddings {
            *x = rng.gen_range(-bound..=bound);
        }
        model
    }

    pub(crate) fn from_parts(
        buckets: u32,
        vocab: DomainVocab,
        num_categories: u32,
        dim: usize,
        embeddings: Vec<f64>,
        output: Vec<f64>,
    ) -> Self {
        TextClassifier {
            buckets,
            vocab,
            num_categories,
            dim,
            embeddings,
            output,
        }
    }

    pub fn buckets(&self) -> u32 {
        self.buckets
    }

    pub fn vocab(&self) -> &DomainVocab {
        &self.vocab
    }

    pub fn num_categories(&self) -> u32 {
        self.num_categories
    }

    pub fn num_classes(&self) -> usize {
        self.num_categories as usize + 1
    }

    /// Label of the noise class.
    pub fn noise_label(&self) -> u32 {
        self.num_categories + 1
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding_rows(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn output_mut(&mut self) -> &mut [f64] {
        &mut self.output
    }

    pub fn embedding_row(&self, row: usize) -> &[f64] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    /// Rows of `E` an example touches, one entry per occurrence.
    pub fn rows_of<'a>(&self, f: &'a TextFeatures) -> impl Iterator<Item = usize> + 'a {
        let base = self.buckets as usize;
        let type_row = base + f.type_id as usize;
        let domain_row = base + NUM_FIELD_TYPES + f.domain_id as usize;
        f.bigram_ids
            .iter()
            .map(|&b| b as usize)
            .chain([type_row, domain_row])
    }

    fn check_features(&self, f: &TextFeatures) {
        debug_assert!(f.bigram_ids.iter().all(|&b| b < self.buckets));
        debug_assert!((f.type_id as usize) < NUM_FIELD_TYPES);
        debug_assert!((f.domain_id as usize) < self.vocab.size());
    }

    pub fn hidden(&self, f: &TextFeatures) -> Vec<f64> {
        self.check_features(f);
        let mut h = vec![0.0; self.dim];
        for row in self.rows_of(f) {
            for (acc, &e) in h.iter_mut().zip(self.embedding_row(row)) {
                *acc += e;
            }
        }
        let denom = (f.n_bigrams() + 2) as f64;
        for x in &mut h {
            *x /= denom;
        }
        h
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        self.output
            .chunks_exact(self.dim)
            .map(|w| w.iter().zip(h).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Class probabilities; index `k` holds label `k + 1`.
    pub fn forward(&self, f: &TextFeatures) -> Vec<f64> {
        softmax(&self.logits(&self.hidden(f)))
    }

    fn check_label(&self, label: u32) -> Result<usize> {
        if label == 0 || label > self.noise_label() {
            return Err(Error::LabelOutOfRange {
                label,
                max: self.noise_label(),
            });
        }
        Ok(label as usize - 1)
    }

    /// `-ln p(label | features)` for one example.
    pub fn example_loss(&self, example: &LabeledText) -> Result<f64> {
        let class = self.check_label(example.label)?;
        let logits = self.logits(&self.hidden(&example.features));
        Ok(log_sum_exp(&logits) - logits[class])
    }

    /// Mean negative log-likelihood of a batch and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[LabeledText]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::EmptyTrainingSet("batch"));
        }
        let n = batch.len() as f64;
        let mut grads = Gradients {
            embedding: BTreeMap::new(),
            output: vec![0.0; self.output.len()],
            dim: self.dim,
        };
        let mut loss = 0.0;
        for example in batch {
            let class = self.check_label(example.label)?;
            let h = self.hidden(&example.features);
            let logits = self.logits(&h);
            loss += log_sum_exp(&logits) - logits[class];
            let mut delta = softmax(&logits);
            delta[class] -= 1.0;
            for (k, d) in delta.iter().enumerate() {
                let row = &mut grads.output[k * self.dim..(k + 1) * self.dim];
                for (g, hj) in row.iter_mut().zip(&h) {
                    *g += d * hj / n;
                }
            }
            let scale = 1.0 / ((example.features.n_bigrams() + 2) as f64 * n);
            let dh = self.backprop_hidden(&delta);
            for r in self.rows_of(&example.features) {
                let g = grads
                    .embedding
                    .entry(r)
                    .or_insert_with(|| vec![0.0; self.dim]);
                for (gj, dj) in g.iter_mut().zip(&dh) {
                    *gj += dj * scale;
                }
            }
        }
        Ok((loss / n, grads))
    }

    /// `W^T delta`.
    fn backprop_hidden(&self, delta: &[f64]) -> Vec<f64> {
        let mut dh = vec![0.0; self.dim];
        for (w, d) in self.output.chunks_exact(self.dim).zip(delta) {
            for (acc, wj) in dh.iter_mut().zip(w) {
                *acc += d * wj;
            }
        }
        dh
    }

    /// One plain SGD step on a single example.
    pub(crate) fn sgd_step(&mut self, example: &LabeledText, lr: f64) -> Result<f64> {
        let class = self.check_label(example.label)?;
        let h = self.hidden(&example.features);
        let logits = self.logits(&h);
        let loss = log_sum_exp(&logits) - logits[class];
        if lr == 0.0 {
            return Ok(loss);
        }
        let mut delta = softmax(&logits);
        delta[class] -= 1.0;
        let dh = self.backprop_hidden(&delta);
        for (k, d) in delta.iter().enumerate() {
            let row = &mut self.output[k * self.dim..(k + 1) * self.dim];
            for (w, hj) in row.iter_mut().zip(&h) {
                *w -= lr * d * hj;
            }
        }
        let scale = lr / (example.features.n_bigrams() + 2) as f64;
        let rows: Vec<usize> = self.rows_of(&example.features).collect();
        for r in rows {
            let e = &mut self.embeddings[r * self.dim..(r + 1) * self.dim];
            for (ej, dj) in e.iter_mut().zip(&dh) {
                *ej -= scale * dj;
            }
        }
        Ok(loss)
    }
}

/// Gradient of the batch loss. Embedding rows absent from the map have a
/// zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub output: Vec<f64>,
    dim: usize,
}

impl Gradients {
    /// Gradient for `E[row][col]`.
    pub fn embedding_at(&self, row: usize, col: usize) -> f64 {
        self.embedding.get(&row).map_or(0.0, |g| g[col])
    }

    pub fn output_at(&self, class: usize, col: usize) -> f64 {
        self.output[class * self.dim + col]
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features(bigrams: &[u32], type_id: u8, domain_id: u32) -> TextFeatures {
        TextFeatures {
            bigram_ids: bigrams.to_vec(),
            type_id,
            domain_id,
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = TextClassifier::zeros(8, DomainVocab::default(), 4, 3);
        let p = m.forward(&features(&[1, 2, 2], 1, 0));
        assert_eq!(p.len(), 5);
        for v in p {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.5]);
        let b = softmax(&[100.3, 98.8, 102.5]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_model_loss_is_log_classes() {
        let m = TextClassifier::zeros(8, DomainVocab::default(), 6, 2);
        let batch = vec![
            LabeledText {
                features: features(&[0], 0, 0),
                label: 1,
            },
            LabeledText {
                features: features(&[3, 4], 3, 0),
                label: 7,
            },
        ];
        let (loss, _) = m.loss_and_grad(&batch).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range_is_fatal() {
        let m = TextClassifier::zeros(8, DomainVocab::default(), 2, 2);
        let bad = vec![LabeledText {
            features: features(&[0], 0, 0),
            label: 4,
        }];
        assert!(matches!(
            m.loss_and_grad(&bad),
            Err(Error::LabelOutOfRange { label: 4, max: 3 })
        ));
        let zero = vec![LabeledText {
            features: features(&[0], 0, 0),
            label: 0,
        }];
        assert!(m.loss_and_grad(&zero).is_err());
        assert!(m.loss_and_grad(&[]).is_err());
    }

    #[test]
    fn untouched_rows_have_no_gradient() {
        let mut m = TextClassifier::zeros(8, DomainVocab::default(), 2, 2);
        m.output_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, w)| *w = i as f64 * 0.1);
        let batch = vec![LabeledText {
            features: features(&[5], 1, 0),
            label: 2,
        }];
        let (_, g) = m.loss_and_grad(&batch).unwrap();
        let rows: Vec<usize> = g.embedding.keys().copied().collect();
        assert_eq!(rows, [5, 8 + 1, 8 + 4]);
        assert_eq!(g.embedding_at(0, 0), 0.0);
    }

    #[test]
    fn confident_prediction_has_near_zero_loss() {
        let mut m = TextClassifier::zeros(4, DomainVocab::default(), 1, 1);
        m.embeddings_mut().iter_mut().for_each(|e| *e = 1.0);
        // h = 1; logits = [w0, w1]; want p(label 1) = 1 - 1e-12
        let gap = ((1.0 - 1e-12) / 1e-12f64).ln();
        m.output_mut().copy_from_slice(&[gap, 0.0]);
        let batch = vec![LabeledText {
            features: features(&[2], 0, 0),
            label: 1,
        }];
        let (loss, _) = m.loss_and_grad(&batch).unwrap();
        assert!(loss < 1e-11, "{loss}");
    }
}
