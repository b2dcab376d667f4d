//! Versioned little-endian model file.
//!
//! ```text
//! magic "WATC" | version u32 | fnv offset u64 | fnv prime u64
//! buckets u32 | categories u32 | dim u32 | domain count u32
//! domain count x (len u32, utf-8 bytes)
//! E: rows x dim f64 | W: (categories + 1) x dim f64
//! ```

use std::path::Path;

use super::features::{DomainVocab, NUM_FIELD_TYPES};
use super::model::TextClassifier;
use crate::error::{Error, Result};
use crate::hashing::{FNV_OFFSET_BASIS, FNV_PRIME};

pub const MAGIC: &[u8; 4] = b"WATC";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &TextClassifier) -> Vec<u8> {
    let mut out = Vec::with_capacity(48 + 8 * (model.embeddings().len() + model.output().len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&FNV_OFFSET_BASIS.to_le_bytes());
    out.extend_from_slice(&FNV_PRIME.to_le_bytes());
    out.extend_from_slice(&model.buckets().to_le_bytes());
    out.extend_from_slice(&model.num_categories().to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    let domains = model.vocab().domains();
    out.extend_from_slice(&(domains.len() as u32).to_le_bytes());
    for d in domains {
        out.extend_from_slice(&(d.len() as u32).to_le_bytes());
        out.extend_from_slice(d.as_bytes());
    }
    for x in model.embeddings().iter().chain(model.output()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(Error::Model(format!("truncated while reading {what}")));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let len = count
            .checked_mul(8)
            .ok_or_else(|| Error::Model(format!("{what} size overflows")))?;
        let raw = self.take(len, what)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model(format!("{what} has non-finite entries")));
        }
        Ok(values)
    }
}

/// Decodes a model, rejecting foreign hash constants and any size that does
/// not match the payload exactly.
pub fn decode_model(bytes: &[u8]) -> Result<TextClassifier> {
    let mut cur = Cursor { bytes };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Model("not a model file (bad magic)".into()));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Model(format!(
            "unsupported format version {version}"
        )));
    }
    let offset = cur.u64("hash offset")?;
    let prime = cur.u64("hash prime")?;
    if offset != FNV_OFFSET_BASIS || prime != FNV_PRIME {
        return Err(Error::Model(format!(
            "hash constants {offset:#x}/{prime:#x} do not match {FNV_OFFSET_BASIS:#x}/{FNV_PRIME:#x}"
        )));
    }
    let buckets = cur.u32("buckets")?;
    let num_categories = cur.u32("categories")?;
    let dim = cur.u32("dim")? as usize;
    if buckets == 0 || num_categories == 0 || dim == 0 {
        return Err(Error::Model("zero model dimension".into()));
    }
    let n_domains = cur.u32("domain count")? as usize;
    // each domain needs at least its 4-byte length prefix
    if n_domains > cur.bytes.len() / 4 {
        return Err(Error::Model("domain count exceeds payload".into()));
    }
    let mut domains = Vec::with_capacity(n_domains);
    for _ in 0..n_domains {
        let len = cur.u32("domain length")? as usize;
        let raw = cur.take(len, "domain")?;
        let d = std::str::from_utf8(raw).map_err(|_| Error::Model("domain is not UTF-8".into()))?;
        domains.push(d.to_owned());
    }
    let vocab = DomainVocab::from_ordered(domains)
        .ok_or_else(|| Error::Model("duplicate domain in vocabulary".into()))?;
    let rows = (buckets as usize)
        .checked_add(NUM_FIELD_TYPES + vocab.size())
        .ok_or_else(|| Error::Model("row count overflows".into()))?;
    let e_len = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::Model("embedding size overflows".into()))?;
    let w_len = (num_categories as usize + 1)
        .checked_mul(dim)
        .ok_or_else(|| Error::Model("output size overflows".into()))?;
    let expected = e_len
        .checked_add(w_len)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Model("payload size overflows".into()))?;
    if cur.bytes.len() != expected {
        return Err(Error::Model(format!(
            "payload is {} bytes, expected {expected}",
            cur.bytes.len()
        )));
    }
    let embeddings = cur.f64s(e_len, "E")?;
    let output = cur.f64s(w_len, "W")?;
    Ok(TextClassifier::from_parts(
        buckets,
        vocab,
        num_categories,
        dim,
        embeddings,
        output,
    ))
}

pub fn save_model(model: &TextClassifier, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TextClassifier> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
