//! Automatic augmentation of a labeled image dataset from web-crawl
//! metadata.
//!
//! Items are labeled by matching category phrases against their metadata
//! ([`matcher`]), filtered by a visual confidence provider ([`scores`]) and
//! refined by a bag-of-bigrams text classifier ([`textclf`]). The
//! [`pipeline`] module chains the stages and persists every intermediate
//! dataset; [`syncorpus`] generates corpora with known ground truth.

pub mod corpus;
pub mod dataset;
mod error;
pub mod evalkit;
pub mod hashing;
pub mod jsonl;
pub mod lexicon;
pub mod matcher;
pub mod pipeline;
pub mod scores;
pub mod syncorpus;
pub mod textclf;

pub use error::{check_unit, Error, Result};
