//! Bag-of-bigrams metadata classifier over `C` categories plus a noise
//! class, trained with plain SGD under a linearly decaying learning rate.

mod features;
mod io;
mod model;
mod predict;
mod train;

pub use features::{
    bigram_bucket, featurize, parse_labeled_record, DomainVocab, LabeledRecord, LabeledText,
    TextFeatures, DEFAULT_BUCKETS, NUM_FIELD_TYPES,
};
pub use io::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use model::{log_sum_exp, softmax, Gradients, TextClassifier};
pub use predict::{predict_item, predict_label_set, DEFAULT_PREDICT_THRESHOLD, TEXTCLF_DATASET};
pub use train::{mean_loss, train, TrainConfig, TrainTrace};
