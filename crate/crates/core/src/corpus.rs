//! Web-crawl metadata records and unlabeled image sets.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::jsonl::{RecordReader, RecordWriter};

/// The four kinds of textual metadata attached to a web image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    Anchor,
    Alt,
    Title,
    Surrounding,
}

impl FieldType {
    pub const ALL: [FieldType; 4] = [
        FieldType::Anchor,
        FieldType::Alt,
        FieldType::Title,
        FieldType::Surrounding,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FieldType::Anchor => "anchor",
            FieldType::Alt => "alt",
            FieldType::Title => "title",
            FieldType::Surrounding => "surrounding",
        }
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FieldType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        FieldType::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown field type {s:?}"))
    }
}

/// One crawled image with its textual metadata and source domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WebDataItem {
    #[serde(rename = "id")]
    pub item_id: String,
    pub image_ref: String,
    #[serde(rename = "anchor")]
    pub anchor_text: String,
    #[serde(rename = "alt")]
    pub alt_text: String,
    #[serde(rename = "title")]
    pub page_title: String,
    #[serde(rename = "surrounding")]
    pub surrounding_text: String,
    pub domain: String,
}

impl WebDataItem {
    pub fn field(&self, field: FieldType) -> &str {
        match field {
            FieldType::Anchor => &self.anchor_text,
            FieldType::Alt => &self.alt_text,
            FieldType::Title => &self.page_title,
            FieldType::Surrounding => &self.surrounding_text,
        }
    }

    /// Non-empty fields in canonical order.
    pub fn fields(&self) -> impl Iterator<Item = (FieldType, &str)> {
        FieldType::ALL
            .into_iter()
            .map(move |f| (f, self.field(f)))
            .filter(|(_, text)| !text.is_empty())
    }
}

#[derive(Deserialize)]
struct RawItem {
    id: Option<String>,
    image_ref: Option<String>,
    anchor: Option<String>,
    alt: Option<String>,
    title: Option<String>,
    surrounding: Option<String>,
    domain: Option<String>,
}

/// Parses one corpus line. Missing text keys are treated as empty.
pub fn parse_item(line: &str) -> std::result::Result<WebDataItem, String> {
    let raw: RawItem = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let item_id = raw.id.filter(|id| !id.is_empty()).ok_or("missing id")?;
    let domain = raw
        .domain
        .map(|d| d.trim().to_lowercase())
        .filter(|d| !d.is_empty())
        .ok_or("missing domain")?;
    let item = WebDataItem {
        item_id,
        image_ref: raw.image_ref.unwrap_or_default(),
        anchor_text: raw.anchor.unwrap_or_default(),
        alt_text: raw.alt.unwrap_or_default(),
        page_title: raw.title.unwrap_or_default(),
        surrounding_text: raw.surrounding.unwrap_or_default(),
        domain,
    };
    if item.fields().next().is_none() {
        return Err("all four text fields are empty".into());
    }
    Ok(item)
}

/// Lazy corpus stream that also rejects repeated item ids.
pub struct CorpusReader<R> {
    inner: RecordReader<R, WebDataItem>,
    seen: HashSet<String>,
    duplicates: usize,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        CorpusReader {
            inner: RecordReader::new(reader, parse_item),
            seen: HashSet::new(),
            duplicates: 0,
        }
    }

    /// Malformed and duplicate records skipped so far.
    pub fn skipped(&self) -> usize {
        self.inner.skipped() + self.duplicates
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<WebDataItem>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let item = match self.inner.next()? {
                Ok(item) => item,
                Err(e) => return Some(Err(e)),
            };
            if self.seen.insert(item.item_id.clone()) {
                return Some(Ok(item));
            }
            self.duplicates += 1;
            log::warn!(
                "line {}: skipped duplicate item id {:?}",
                self.inner.lines_read(),
                item.item_id
            );
        }
    }
}

/// Opens a corpus file as a lazy item stream.
pub fn ingest_corpus(
    path: impl AsRef<Path>,
) -> Result<CorpusReader<std::io::BufReader<std::fs::File>>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(CorpusReader::new(std::io::BufReader::new(file)))
}

/// Reads a whole corpus file into memory, returning the items and the
/// number of skipped lines.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<(Vec<WebDataItem>, usize)> {
    let mut reader = ingest_corpus(path)?;
    let items = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((items, reader.skipped()))
}

pub fn write_corpus<'a>(
    path: impl AsRef<Path>,
    items: impl IntoIterator<Item = &'a WebDataItem>,
) -> Result<()> {
    crate::jsonl::write_all(path, items)
}

/// Serializes one item exactly as the corpus writer does.
pub fn serialize_item(item: &WebDataItem) -> String {
    serde_json::to_string(item).expect("corpus items always serialize")
}

/// One non-empty metadata field of an item, the unit the text classifier sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    #[serde(rename = "id")]
    pub item_id: String,
    #[serde(rename = "field")]
    pub field_type: FieldType,
    pub text: String,
    pub domain: String,
}

/// One record per non-empty field, in anchor, alt, title, surrounding order.
pub fn expand_records(item: &WebDataItem) -> Vec<TextRecord> {
    item.fields()
        .map(|(field_type, text)| TextRecord {
            item_id: item.item_id.clone(),
            field_type,
            text: text.to_owned(),
            domain: item.domain.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledImageRef {
    #[serde(rename = "id")]
    pub item_id: String,
    pub image_ref: String,
}

pub fn parse_unlabeled(line: &str) -> std::result::Result<UnlabeledImageRef, String> {
    let r: UnlabeledImageRef = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if r.item_id.is_empty() {
        return Err("missing id".into());
    }
    Ok(r)
}

/// Reads an unlabeled-set file, dropping repeated ids.
pub fn read_unlabeled(path: impl AsRef<Path>) -> Result<Vec<UnlabeledImageRef>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in RecordReader::open(path, parse_unlabeled)? {
        let r = r?;
        if seen.insert(r.item_id.clone()) {
            out.push(r);
        }
    }
    Ok(out)
}

pub fn write_unlabeled<'a>(
    path: impl AsRef<Path>,
    refs: impl IntoIterator<Item = &'a UnlabeledImageRef>,
) -> Result<()> {
    let mut w = RecordWriter::create(path)?;
    for r in refs {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

/// Items keyed by id, for resolving labeled pairs back to their metadata.
#[derive(Debug, Default, Clone)]
pub struct CorpusIndex {
    items: HashMap<String, WebDataItem>,
}

impl CorpusIndex {
    pub fn new(items: impl IntoIterator<Item = WebDataItem>) -> Self {
        CorpusIndex {
            items: items.into_iter().map(|i| (i.item_id.clone(), i)).collect(),
        }
    }

    /// Streams a corpus file keeping only the items whose id is wanted.
    pub fn load_subset(path: impl AsRef<Path>, wanted: &HashSet<&str>) -> Result<Self> {
        let mut items = HashMap::new();
        for item in ingest_corpus(path)? {
            let item = item?;
            if wanted.contains(item.item_id.as_str()) {
                items.insert(item.item_id.clone(), item);
            }
        }
        Ok(CorpusIndex { items })
    }

    pub fn get(&self, item_id: &str) -> Option<&WebDataItem> {
        self.items.get(item_id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, alt: &str) -> WebDataItem {
        WebDataItem {
            item_id: id.into(),
            image_ref: format!("http://x/{id}.jpg"),
            anchor_text: String::new(),
            alt_text: alt.into(),
            page_title: String::new(),
            surrounding_text: String::new(),
            domain: "example.org".into(),
        }
    }

    #[test]
    fn three_lines_in_order() {
        let data = r#"{"id":"a","image_ref":"u1","alt":"x","domain":"d.com"}
{"id":"b","image_ref":"u2","title":"y","domain":"d.com"}
{"id":"c","image_ref":"u3","surrounding":"z","domain":"d.com"}
"#;
        let ids: Vec<String> = CorpusReader::new(data.as_bytes())
            .map(|i| i.unwrap().item_id)
            .collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn all_empty_fields_skipped() {
        let data = r#"{"id":"a","image_ref":"u1","alt":"x","domain":"d.com"}
{"id":"b","image_ref":"u2","anchor":"","alt":"","domain":"d.com"}
"#;
        let mut reader = CorpusReader::new(data.as_bytes());
        assert_eq!(reader.by_ref().count(), 1);
        assert_eq!(reader.skipped(), 1);
    }

    #[test]
    fn missing_id_or_domain_and_duplicates_skipped() {
        let data = r#"{"image_ref":"u1","alt":"x","domain":"d.com"}
{"id":"a","alt":"x"}
{"id":"a","alt":"x","domain":"D.com"}
{"id":"a","alt":"y","domain":"d.com"}
not json
"#;
        let mut reader = CorpusReader::new(data.as_bytes());
        let items: Vec<_> = reader.by_ref().map(|i| i.unwrap()).collect();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].domain, "d.com");
        assert_eq!(items[0].alt_text, "x");
        assert_eq!(reader.skipped(), 4);
    }

    #[test]
    fn expand_single_and_full() {
        let one = expand_records(&item("a", "european goldfinch"));
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].field_type, FieldType::Alt);

        let mut full = item("b", "alt");
        full.anchor_text = "anchor".into();
        full.page_title = "title".into();
        full.surrounding_text = "around".into();
        let recs = expand_records(&full);
        let types: Vec<_> = recs.iter().map(|r| r.field_type).collect();
        assert_eq!(types, FieldType::ALL);
        assert!(recs
            .iter()
            .all(|r| r.item_id == "b" && r.domain == "example.org"));
    }

    #[test]
    fn serialize_then_parse_is_identity() {
        let mut it = item("q", "a \"quoted\" alt\twith tab");
        it.surrounding_text = "ünïcödé 鳥".into();
        let line = serialize_item(&it);
        assert_eq!(parse_item(&line).unwrap(), it);
        assert_eq!(serialize_item(&parse_item(&line).unwrap()), line);
    }
}
