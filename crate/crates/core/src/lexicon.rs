//! Category definitions and their multilingual phrase sets.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Canonical form shared by lexicon phrases and matched text: NFC, lowercased,
/// whitespace runs collapsed to one space, ends trimmed.
pub fn normalize_phrase(raw: &str) -> String {
    let lowered: String = raw.nfc().collect::<String>().to_lowercase();
    let composed: String = lowered.nfc().collect();
    let mut out = String::with_capacity(composed.len());
    for word in composed.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Phrase {
    pub text: String,
    #[serde(default)]
    pub lang: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u32,
    pub name: String,
    pub phrases: Vec<Phrase>,
}

/// Categories `1..=C`, each with a non-empty set of normalized phrases.
///
/// Phrase sets may overlap between categories; an overlapping phrase labels
/// an item with every category that lists it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    categories: Vec<Category>,
}

impl Lexicon {
    /// Normalizes and validates raw categories.
    ///
    /// Duplicate `(text, lang)` pairs within a category collapse to one. Ids
    /// must be unique and form exactly `1..=C`.
    pub fn new(raw: Vec<Category>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Lexicon("no categories".into()));
        }
        let mut ids = HashSet::new();
        let mut categories = Vec::with_capacity(raw.len());
        for cat in raw {
            if !ids.insert(cat.id) {
                return Err(Error::Lexicon(format!("duplicate category id {}", cat.id)));
            }
            let mut seen = HashSet::new();
            let phrases: Vec<Phrase> = cat
                .phrases
                .into_iter()
                .map(|p| Phrase {
                    text: normalize_phrase(&p.text),
                    lang: p.lang,
                })
                .filter(|p| !p.text.is_empty())
                .filter(|p| seen.insert(p.clone()))
                .collect();
            if phrases.is_empty() {
                return Err(Error::Lexicon(format!(
                    "category {} ({:?}) has no phrases after normalization",
                    cat.id, cat.name
                )));
            }
            categories.push(Category {
                id: cat.id,
                name: cat.name,
                phrases,
            });
        }
        categories.sort_by_key(|c| c.id);
        for (idx, cat) in categories.iter().enumerate() {
            if cat.id as usize != idx + 1 {
                return Err(Error::Lexicon(format!(
                    "category ids must be exactly 1..={}, found {}",
                    categories.len(),
                    cat.id
                )));
            }
        }
        Ok(Lexicon { categories })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Vec<Category> =
            serde_json::from_str(text).map_err(|e| Error::Lexicon(e.to_string()))?;
        Lexicon::new(raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.categories).expect("lexicon serializes")
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, id: u32) -> Option<&Category> {
        id.checked_sub(1)
            .and_then(|idx| self.categories.get(idx as usize))
    }

    /// Every `(phrase text, category id)` pair.
    pub fn phrase_pairs(&self) -> impl Iterator<Item = (&str, u32)> {
        self.categories
            .iter()
            .flat_map(|c| c.phrases.iter().map(move |p| (p.text.as_str(), c.id)))
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Lexicon::from_json(&text)
}

pub fn save_lexicon(lexicon: &Lexicon, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, lexicon.to_json() + "\n").map_err(|e| Error::io(path, e))
}
