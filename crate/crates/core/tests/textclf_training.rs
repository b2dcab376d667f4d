use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use webaug::corpus::{FieldType, TextRecord};
use webaug::textclf::{
    featurize, train, DomainVocab, LabeledText, TextClassifier, TextFeatures, TrainConfig,
};

fn random_model(rng: &mut ChaCha8Rng) -> (TextClassifier, Vec<LabeledText>) {
    let buckets = rng.gen_range(4..16);
    let categories = rng.gen_range(1..5);
    let dim = rng.gen_range(1..5);
    let vocab = DomainVocab::build(["a.org", "b.org"]);
    let mut m = TextClassifier::zeros(buckets, vocab, categories, dim);
    m.embeddings_mut()
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-1.0..1.0));
    m.output_mut()
        .iter_mut()
        .for_each(|x| *x = rng.gen_range(-1.0..1.0));
    let batch = (0..rng.gen_range(1..6))
        .map(|_| LabeledText {
            features: TextFeatures {
                bigram_ids: (0..rng.gen_range(0..5))
                    .map(|_| rng.gen_range(0..buckets))
                    .collect(),
                type_id: rng.gen_range(0..4),
                domain_id: rng.gen_range(0..3),
            },
            label: rng.gen_range(1..=categories + 1),
        })
        .collect();
    (m, batch)
}

fn batch_loss(m: &TextClassifier, batch: &[LabeledText]) -> f64 {
    // direct evaluation of -(1/N) sum log p(y|x)
    let total: f64 = batch
        .iter()
        .map(|e| -m.forward(&e.features)[e.label as usize - 1].ln())
        .sum();
    total / batch.len() as f64
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[test]
fn gradients_match_central_differences() {
    let step = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (model, batch) = random_model(&mut rng);
        let (loss, grads) = model.loss_and_grad(&batch).unwrap();
        assert!((loss - batch_loss(&model, &batch)).abs() < 1e-12);
        for idx in 0..model.embeddings().len() {
            let (row, col) = (idx / model.dim(), idx % model.dim());
            let mut plus = model.clone();
            plus.embeddings_mut()[idx] += step;
            let mut minus = model.clone();
            minus.embeddings_mut()[idx] -= step;
            let numeric = (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * step);
            let err = relative_error(grads.embedding_at(row, col), numeric);
            assert!(err < 1e-4, "E[{row},{col}]: rel err {err}");
        }
        for idx in 0..model.output().len() {
            let (class, col) = (idx / model.dim(), idx % model.dim());
            let mut plus = model.clone();
            plus.output_mut()[idx] += step;
            let mut minus = model.clone();
            minus.output_mut()[idx] -= step;
            let numeric = (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * step);
            let err = relative_error(grads.output_at(class, col), numeric);
            assert!(err < 1e-4, "W[{class},{col}]: rel err {err}");
        }
    }
}

fn record(text: String) -> TextRecord {
    TextRecord {
        item_id: String::new(),
        field_type: FieldType::Alt,
        text,
        domain: "shared.org".into(),
    }
}

/// Six classes (five categories plus noise) with disjoint signature words
/// mixed into shared filler.
fn separable(
    per_class: usize,
    buckets: u32,
    seed: u64,
) -> (Vec<LabeledText>, Vec<LabeledText>, DomainVocab) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = DomainVocab::build(["shared.org"]);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for class in 1..=6u32 {
        for _ in 0..per_class {
            let mut tokens: Vec<String> = (0..4)
                .map(|_| format!("filler{}", rng.gen_range(0..30)))
                .collect();
            for _ in 0..2 {
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, format!("sig{class}x{}", rng.gen_range(0..4)));
            }
            let example = LabeledText {
                features: featurize(&record(tokens.join(" ")), buckets, &vocab),
                label: class,
            };
            if class == 6 {
                neg.push(example)
            } else {
                pos.push(example)
            }
        }
    }
    (pos, neg, vocab)
}

fn argmax(p: &[f64]) -> usize {
    (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best })
}

#[test]
fn separable_task_is_learned() {
    let (pos, neg, vocab) = separable(200, 1 << 20, 5);
    let config = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    assert_eq!(config.epochs, 5);
    let (model, trace) = train(&pos, &neg, 5, vocab, &config).unwrap();
    let all: Vec<&LabeledText> = pos.iter().chain(&neg).collect();
    let correct = all
        .iter()
        .filter(|e| argmax(&model.forward(&e.features)) + 1 == e.label as usize)
        .count();
    let accuracy = correct as f64 / all.len() as f64;
    assert!(accuracy >= 0.95, "training accuracy {accuracy}");
    let (first, last) = (trace.epoch_loss[0], *trace.epoch_loss.last().unwrap());
    assert!((first - 6f64.ln()).abs() < 1e-9);
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn training_is_bit_reproducible() {
    let (pos, neg, vocab) = separable(30, 1 << 12, 9);
    let config = TrainConfig {
        seed: 42,
        buckets: 1 << 12,
        ..TrainConfig::default()
    };
    let (a, ta) = train(&pos, &neg, 5, vocab.clone(), &config).unwrap();
    let (b, tb) = train(&pos, &neg, 5, vocab.clone(), &config).unwrap();
    let bits = |m: &TextClassifier| -> Vec<u64> {
        m.embeddings()
            .iter()
            .chain(m.output())
            .map(|x| x.to_bits())
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ta, tb);
    let (c, _) = train(&pos, &neg, 5, vocab, &TrainConfig { seed: 43, ..config }).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

proptest! {
    #[test]
    fn forward_is_a_simplex_point(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, batch) = random_model(&mut rng);
        for e in &batch {
            let p = model.forward(&e.features);
            prop_assert_eq!(p.len(), model.num_classes());
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn bigram_order_does_not_matter(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, batch) = random_model(&mut rng);
        for e in &batch {
            let mut reversed = e.features.clone();
            reversed.bigram_ids.reverse();
            let (a, b) = (model.forward(&e.features), model.forward(&reversed));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_loss_is_log_of_classes(categories in 1u32..20, label_seed in any::<u64>()) {
        let model = TextClassifier::zeros(8, DomainVocab::default(), categories, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
        let batch: Vec<LabeledText> = (0..4)
            .map(|_| LabeledText {
                features: TextFeatures { bigram_ids: vec![rng.gen_range(0..8)], type_id: 1, domain_id: 0 },
                label: rng.gen_range(1..=categories + 1),
            })
            .collect();
        let (loss, _) = model.loss_and_grad(&batch).unwrap();
        prop_assert!((loss - ((categories + 1) as f64).ln()).abs() < 1e-9);
    }
}
