//! Cleaned document store: ingest, persistence and iteration.
//!
//! On disk a store is a UTF-8 text file:
//!
//! ```text
//! DFSTORE<TAB>1
//! <doc_id><TAB><title><TAB><text><TAB><token_count><TAB><origin>
//! ...
//! #END<TAB><doc count><TAB><total_tokens><TAB><tokenizer_id><TAB><crc64 hex>
//! ```
//!
//! Fields escape backslash, tab, newline and carriage return. `origin` is
//! empty unless the store was produced by corpus selection, in which case
//! it holds the doc id in the source store. The checksum covers every byte
//! before the footer line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checksum;
use crate::clean::clean_text;
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

pub const STORE_MAGIC: &str = "DFSTORE";
pub const STORE_VERSION: u32 = 1;
const FOOTER_TAG: &str = "#END";

pub const DEFAULT_MIN_TOKENS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: u64,
    pub title: String,
    pub text: String,
    pub token_count: u64,
    /// Doc id in the store this document was selected from, if any.
    pub origin: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStore {
    documents: Vec<Document>,
    total_tokens: u64,
    tokenizer_id: String,
}

impl CorpusStore {
    pub fn empty(tokenizer_id: impl Into<String>) -> Self {
        Self { documents: Vec::new(), total_tokens: 0, tokenizer_id: tokenizer_id.into() }
    }

    /// Build a store from documents, re-assigning dense doc ids in order.
    pub fn from_documents(tokenizer_id: impl Into<String>, documents: Vec<Document>) -> Self {
        let mut store = Self::empty(tokenizer_id);
        for doc in documents {
            store.push(doc);
        }
        store
    }

    fn push(&mut self, mut doc: Document) {
        doc.doc_id = self.documents.len() as u64;
        self.total_tokens += doc.token_count;
        self.documents.push(doc);
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, doc_id: u64) -> Option<&Document> {
        self.documents.get(doc_id as usize)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }
}

impl<'a> IntoIterator for &'a CorpusStore {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;

    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    pub min_tokens: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { min_tokens: DEFAULT_MIN_TOKENS }
    }
}

/// Clean and tokenize raw records into a store.
///
/// Records whose cleaned body has fewer than `min_tokens` tokens are
/// dropped; survivors get doc ids in input order.
pub fn ingest(records: &[RawRecord], tokenizer: &dyn Tokenizer, opts: IngestOptions) -> Result<CorpusStore> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = records
        .iter()
        .filter(|r| !seen.insert(r.source_id.as_str()))
        .map(|r| r.source_id.clone())
        .collect();
    if !dups.is_empty() {
        dups.sort();
        dups.dedup();
        return Err(Error::DuplicateSourceIds(dups));
    }

    let cleaned: Vec<Option<Document>> = records
        .par_iter()
        .map(|r| {
            let text = clean_text(&r.body);
            let token_count = tokenizer.tokenize(&text).len();
            if text.is_empty() || token_count < opts.min_tokens {
                return None;
            }
            Some(Document { doc_id: 0, title: clean_text(&r.title), text, token_count: token_count as u64, origin: None })
        })
        .collect();

    let mut store = CorpusStore::empty(tokenizer.id());
    for doc in cleaned.into_iter().flatten() {
        store.push(doc);
    }
    Ok(store)
}

/// Read JSON-lines raw records (`source_id`, `title`, `body`).
pub fn read_raw_records(path: &Path) -> Result<Vec<RawRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn escape_field(s: &str, out: &mut String) {
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

pub(crate) fn unescape_field(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(Error::Format(format!("bad escape sequence \\{}", other.map(String::from).unwrap_or_default()))),
        }
    }
    Ok(out)
}

/// Serialize a store to its on-disk text form.
pub fn store_to_bytes(store: &CorpusStore) -> Vec<u8> {
    let mut body = format!("{STORE_MAGIC}\t{STORE_VERSION}\n");
    for doc in store {
        body.push_str(&doc.doc_id.to_string());
        body.push('\t');
        escape_field(&doc.title, &mut body);
        body.push('\t');
        escape_field(&doc.text, &mut body);
        body.push('\t');
        body.push_str(&doc.token_count.to_string());
        body.push('\t');
        if let Some(origin) = doc.origin {
            body.push_str(&origin.to_string());
        }
        body.push('\n');
    }
    let crc = checksum::checksum64(body.as_bytes());
    let mut footer = format!("{FOOTER_TAG}\t{}\t{}\t", store.len(), store.total_tokens());
    escape_field(store.tokenizer_id(), &mut footer);
    footer.push_str(&format!("\t{crc:016x}\n"));
    body.push_str(&footer);
    body.into_bytes()
}

pub fn store_from_bytes(bytes: &[u8]) -> Result<CorpusStore> {
    let text = std::str::from_utf8(bytes).map_err(|e| match e.error_len() {
        None => Error::Truncated("file ends inside a UTF-8 sequence".into()),
        Some(_) => Error::Format(format!("store is not UTF-8: {e}")),
    })?;

    let header_end = text.find('\n').ok_or_else(|| {
        if text.starts_with(STORE_MAGIC) || STORE_MAGIC.starts_with(text) {
            Error::Truncated("missing header line".into())
        } else {
            Error::Format("missing store magic header".into())
        }
    })?;
    let (magic, version) = text[..header_end]
        .split_once('\t')
        .ok_or_else(|| Error::Format("malformed store header".into()))?;
    if magic != STORE_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {STORE_MAGIC:?}")));
    }
    let version: u32 = version.parse().map_err(|_| Error::Format(format!("bad version field {version:?}")))?;
    if version != STORE_VERSION {
        return Err(Error::Version { found: version, expected: STORE_VERSION });
    }

    // The footer is the last complete line starting with the footer tag.
    let footer_start = text
        .rfind(&format!("\n{FOOTER_TAG}\t"))
        .map(|p| p + 1)
        .ok_or_else(|| Error::Truncated("footer record not found".into()))?;
    let footer = &text[footer_start..];
    let footer = footer.strip_suffix('\n').ok_or_else(|| Error::Truncated("footer line incomplete".into()))?;
    let fields: Vec<&str> = footer.split('\t').collect();
    if fields.len() != 5 {
        return Err(Error::Truncated(format!("footer has {} fields, expected 5", fields.len())));
    }
    let doc_count: usize = parse_num(fields[1], "footer doc count")?;
    let total_tokens: u64 = parse_num(fields[2], "footer total_tokens")?;
    let tokenizer_id = unescape_field(fields[3])?;
    let stored = u64::from_str_radix(fields[4], 16).map_err(|_| Error::Truncated("footer checksum unreadable".into()))?;
    if fields[4].len() != 16 {
        return Err(Error::Truncated("footer checksum incomplete".into()));
    }
    let computed = checksum::checksum64(&bytes[..footer_start]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut store = CorpusStore::empty(tokenizer_id);
    for (i, line) in text[header_end + 1..footer_start].lines().enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::Parse { line: lineno, msg: format!("expected 5 fields, found {}", f.len()) });
        }
        let doc_id: u64 = parse_num(f[0], "doc_id")?;
        if doc_id != store.len() as u64 {
            return Err(Error::Parse { line: lineno, msg: format!("doc_id {doc_id} out of sequence") });
        }
        let origin = if f[4].is_empty() { None } else { Some(parse_num(f[4], "origin")?) };
        store.push(Document {
            doc_id,
            title: unescape_field(f[1])?,
            text: unescape_field(f[2])?,
            token_count: parse_num(f[3], "token_count")?,
            origin,
        });
    }
    if store.len() != doc_count {
        return Err(Error::Truncated(format!("footer declares {doc_count} documents, found {}", store.len())));
    }
    if store.total_tokens() != total_tokens {
        return Err(Error::Format(format!(
            "footer total_tokens {total_tokens} disagrees with records ({})",
            store.total_tokens()
        )));
    }
    Ok(store)
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("bad {what}: {s:?}")))
}

pub fn save_store(store: &CorpusStore, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&store_to_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn load_store(path: &Path) -> Result<CorpusStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    store_from_bytes(&bytes)
}

/// Token frequency table over a whole store, in deterministic order.
pub fn token_frequencies(store: &CorpusStore, tokenizer: &dyn Tokenizer) -> BTreeMap<String, u64> {
    let mut freq = BTreeMap::new();
    for doc in store {
        for tok in tokenizer.tokenize(&doc.text) {
            *freq.entry(tok).or_insert(0) += 1;
        }
    }
    freq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::CjkCharTokenizer;

    fn rec(id: &str, body: &str) -> RawRecord {
        RawRecord { source_id: id.into(), title: String::new(), body: body.into() }
    }

    fn ingest_default(records: &[RawRecord]) -> Result<CorpusStore> {
        ingest(records, &CjkCharTokenizer, IngestOptions::default())
    }

    #[test]
    fn empty_input() {
        let store = ingest_default(&[]).unwrap();
        assert_eq!(store.len(), 0);
        assert_eq!(store.total_tokens(), 0);
    }

    #[test]
    fn singleton() {
        let store = ingest_default(&[rec("x", "甘草味甘性平归心肺脾胃经")]).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.documents()[0].doc_id, 0);
        assert_eq!(store.documents()[0].token_count, 12);
        assert_eq!(store.total_tokens(), 12);
    }

    #[test]
    fn drop_rule_keeps_ids_dense() {
        let recs = [rec("a", "黄芪补气升阳固表止汗利水消肿"), rec("b", "<br/>{{stub}}"), rec("c", "人参大补元气复脉固脱补脾益肺")];
        let store = ingest_default(&recs).unwrap();
        let ids: Vec<u64> = store.iter().map(|d| d.doc_id).collect();
        assert_eq!(ids, [0, 1]);
        assert!(store.documents()[1].text.starts_with("人参"));
    }

    #[test]
    fn short_documents_dropped() {
        let store = ingest_default(&[rec("a", "甘草入药")]).unwrap();
        assert!(store.is_empty());
        let store = ingest(&[rec("a", "甘草入药")], &CjkCharTokenizer, IngestOptions { min_tokens: 4 }).unwrap();
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn duplicate_source_ids_rejected() {
        let recs = [rec("a", "x"), rec("b", "y"), rec("a", "z"), rec("b", "w"), rec("a", "v")];
        match ingest_default(&recs) {
            Err(Error::DuplicateSourceIds(ids)) => assert_eq!(ids, ["a", "b"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn two_doc_store() -> CorpusStore {
        let recs = [
            RawRecord { source_id: "1".into(), title: "甘草\t条目".into(), body: "甘草味甘性平归心肺脾胃经 a\\b".into() },
            rec("2", "黄芪补气升阳固表止汗利水消肿"),
        ];
        ingest_default(&recs).unwrap()
    }

    #[test]
    fn round_trip_empty() {
        let store = CorpusStore::empty("cjk-char-v1");
        let bytes = store_to_bytes(&store);
        assert_eq!(store_from_bytes(&bytes).unwrap(), store);
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let store = two_doc_store();
        let bytes = store_to_bytes(&store);
        let back = store_from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(store_to_bytes(&back), bytes);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = store_to_bytes(&two_doc_store());
        bytes[0] = b'X';
        assert!(matches!(store_from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch() {
        let bytes = store_to_bytes(&two_doc_store());
        let text = String::from_utf8(bytes).unwrap().replacen("DFSTORE\t1", "DFSTORE\t9", 1);
        assert!(matches!(store_from_bytes(text.as_bytes()), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn truncation_detected() {
        let bytes = store_to_bytes(&two_doc_store());
        for cut in [bytes.len() - 1, bytes.len() - 20, bytes.len() / 2, 3] {
            assert!(matches!(store_from_bytes(&bytes[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
    }

    #[test]
    fn corruption_detected() {
        let bytes = store_to_bytes(&two_doc_store());
        let text = String::from_utf8(bytes).unwrap().replacen("黄芪", "黄苠", 1);
        assert!(matches!(store_from_bytes(text.as_bytes()), Err(Error::Checksum { .. })));
    }
}
