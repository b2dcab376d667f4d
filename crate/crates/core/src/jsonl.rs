//! Line-delimited record streams.
//!
//! Every on-disk format in this crate is one JSON object per line. Readers
//! are lazy: a malformed line is logged with its line number, counted and
//! skipped, while an unreadable stream ends iteration with an error.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Parses one line into a record, or explains why it is malformed.
pub type LineParser<T> = fn(&str) -> std::result::Result<T, String>;

/// Lazy reader over a line-delimited record stream.
pub struct RecordReader<R, T> {
    reader: R,
    parse: LineParser<T>,
    buf: Vec<u8>,
    line: usize,
    skipped: usize,
    failed: bool,
}

impl<R: BufRead, T> RecordReader<R, T> {
    pub fn new(reader: R, parse: LineParser<T>) -> Self {
        RecordReader {
            reader,
            parse,
            buf: Vec::new(),
            line: 0,
            skipped: 0,
            failed: false,
        }
    }

    /// Number of malformed lines skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Number of lines consumed so far, blank lines included.
    pub fn lines_read(&self) -> usize {
        self.line
    }
}

impl<T> RecordReader<BufReader<File>, T> {
    pub fn open(path: impl AsRef<Path>, parse: LineParser<T>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(RecordReader::new(BufReader::new(file), parse))
    }
}

impl<R: BufRead, T> Iterator for RecordReader<R, T> {
    type Item = Result<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            match self.reader.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::Stream(e)));
                }
            }
            self.line += 1;
            let text = match std::str::from_utf8(&self.buf) {
                Ok(text) => text.trim_end_matches(['\n', '\r']),
                Err(e) => {
                    self.skip(format!("invalid UTF-8: {e}"));
                    continue;
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            match (self.parse)(text) {
                Ok(record) => return Some(Ok(record)),
                Err(reason) => self.skip(reason),
            }
        }
    }
}

impl<R, T> RecordReader<R, T> {
    fn skip(&mut self, reason: String) {
        self.skipped += 1;
        log::warn!("line {}: skipped malformed record: {}", self.line, reason);
    }
}

/// Parses every line of an in-memory document, failing on the first
/// malformed line. Used for small side inputs where skipping would hide a
/// real problem.
pub fn parse_strict<T>(text: &str, parse: LineParser<T>) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse(line).map_err(|reason| Error::Malformed {
            line: idx + 1,
            reason,
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Buffered line-delimited writer.
pub struct RecordWriter<W: Write> {
    out: W,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Self {
        RecordWriter { out }
    }

    pub fn write<S: Serialize>(&mut self, record: &S) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl RecordWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(RecordWriter::new(BufWriter::new(file)))
    }
}

/// Writes every record to `path`, one per line.
pub fn write_all<'a, S, I>(path: impl AsRef<Path>, records: I) -> Result<()>
where
    S: Serialize + 'a,
    I: IntoIterator<Item = &'a S>,
{
    let mut writer = RecordWriter::create(path)?;
    for record in records {
        writer.write(record)?;
    }
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_int(line: &str) -> std::result::Result<i64, String> {
        line.trim().parse().map_err(|e| format!("{e}"))
    }

    #[test]
    fn skips_malformed_and_blank_lines() {
        let data = b"1\n\nxx\n3\n\xff\xfe\n4";
        let mut reader = RecordReader::new(&data[..], parse_int);
        let values: Vec<i64> = reader.by_ref().map(|r| r.unwrap()).collect();
        assert_eq!(values, vec![1, 3, 4]);
        assert_eq!(reader.skipped(), 2);
        assert_eq!(reader.lines_read(), 6);
    }

    #[test]
    fn strict_parse_reports_line_number() {
        let err = parse_strict("1\n2\nnope\n", parse_int).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_file_is_fatal() {
        assert!(RecordReader::open("/nonexistent/x.jsonl", parse_int).is_err());
    }
}
