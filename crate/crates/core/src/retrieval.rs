//! Inverted index, BM25 scoring of weight-expanded queries, and
//! budgeted domain-corpus selection.
//!
//! Index file layout (all integers little-endian):
//!
//! ```text
//! "DFIDX1"
//! u64 doc count N, u64 total tokens, N x u64 document lengths
//! f64 avgdl, f64 k1, f64 b
//! u32 len + UTF-8 tokenizer id
//! u64 term count, then per term in byte order:
//!     u32 len + UTF-8 term, u64 posting count,
//!     per posting: LEB128 doc-id delta, u32 term frequency
//! u64 CRC-64 of all preceding bytes
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checksum::checksum64;
use crate::error::{Error, Result};
use crate::keywords::DomainKeywordSet;
use crate::store::{CorpusStore, Document};
use crate::tokenizer::Tokenizer;

pub const INDEX_MAGIC: &[u8; 5] = b"DFIDX";
pub const INDEX_VERSION: u8 = b'1';

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_id: u64,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u64>,
    total_tokens: u64,
    avgdl: f64,
    params: Bm25Params,
    tokenizer_id: String,
}

impl InvertedIndex {
    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    pub fn doc_count(&self) -> u64 {
        self.doc_lengths.len() as u64
    }

    pub fn doc_length(&self, doc_id: u64) -> u64 {
        self.doc_lengths[doc_id as usize]
    }

    pub fn doc_lengths(&self) -> &[u64] {
        &self.doc_lengths
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    /// Number of documents containing `term`.
    pub fn doc_freq(&self, term: &str) -> u64 {
        self.postings(term).len() as u64
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, positive for every `n <= N`.
    pub fn idf(&self, term: &str) -> f64 {
        bm25_idf(self.doc_count(), self.doc_freq(term))
    }

    fn term_frequency(&self, term: &str, doc_id: u64) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&doc_id, |p| p.doc_id).map_or(0, |i| list[i].tf)
    }
}

pub fn bm25_idf(doc_count: u64, doc_freq: u64) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Saturated, length-normalized term-frequency factor.
pub fn bm25_tf(tf: u32, doc_len: u64, avgdl: f64, params: Bm25Params) -> f64 {
    let tf = tf as f64;
    let norm = 1.0 - params.b + params.b * doc_len as f64 / avgdl;
    tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

pub fn build_index(store: &CorpusStore, tokenizer: &dyn Tokenizer, params: Bm25Params) -> Result<InvertedIndex> {
    if store.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(params.k1 > 0.0) || !(0.0..=1.0).contains(&params.b) {
        return Err(Error::InvalidArgument(format!("need k1 > 0 and 0 <= b <= 1, got k1={} b={}", params.k1, params.b)));
    }
    if tokenizer.id() != store.tokenizer_id() {
        return Err(Error::InvalidArgument(format!(
            "store was tokenized with {:?}, index tokenizer is {:?}",
            store.tokenizer_id(),
            tokenizer.id()
        )));
    }

    let per_doc: Vec<(u64, BTreeMap<String, u32>)> = store
        .documents()
        .par_iter()
        .map(|doc| {
            let tokens = tokenizer.tokenize(&doc.text);
            let mut tf = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_insert(0u32) += 1;
            }
            (tokens.len() as u64, tf)
        })
        .collect();

    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(per_doc.len());
    for (doc_id, (len, tf)) in per_doc.into_iter().enumerate() {
        doc_lengths.push(len);
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting { doc_id: doc_id as u64, tf: count });
        }
    }
    let total_tokens: u64 = doc_lengths.iter().sum();
    Ok(InvertedIndex {
        postings,
        avgdl: total_tokens as f64 / doc_lengths.len() as f64,
        doc_lengths,
        total_tokens,
        params,
        tokenizer_id: tokenizer.id().to_string(),
    })
}

/// Query terms with repetition counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpandedQuery {
    terms: BTreeMap<String, u32>,
}

impl ExpandedQuery {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, term: impl Into<String>, times: u32) {
        if times > 0 {
            *self.terms.entry(term.into()).or_insert(0) += times;
        }
    }

    pub fn multiplicity(&self, term: &str) -> u32 {
        self.terms.get(term).copied().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, u32)> {
        self.terms.iter().map(|(t, &m)| (t.as_str(), m))
    }

    pub fn distinct_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn len(&self) -> u64 {
        self.terms.values().map(|&m| m as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Plain query: every token of `text` once per occurrence.
    pub fn from_text(text: &str, tokenizer: &dyn Tokenizer) -> Self {
        let mut q = Self::new();
        for t in tokenizer.tokenize(text) {
            q.add(t, 1);
        }
        q
    }
}

/// Repetitions for a keyword of weight `w`: `max(1, min(floor(w), 3))`.
pub fn repetitions(weight: f64) -> u32 {
    (weight.floor().min(3.0) as u32).max(1)
}

/// Repeat each keyword by its weight; multi-token keywords contribute every
/// token with the keyword's repetition count.
pub fn expand_query(keywords: &DomainKeywordSet, tokenizer: &dyn Tokenizer) -> ExpandedQuery {
    let mut q = ExpandedQuery::new();
    for entry in keywords.entries() {
        let times = repetitions(entry.weight);
        for tok in tokenizer.tokenize(&entry.keyword) {
            q.add(tok, times);
        }
    }
    q
}

/// BM25 score of one document; query terms count with multiplicity.
pub fn bm25_score(index: &InvertedIndex, doc_id: u64, query: &ExpandedQuery) -> f64 {
    assert!(doc_id < index.doc_count(), "doc_id {doc_id} out of range");
    let dl = index.doc_length(doc_id);
    let mut score = 0.0;
    for (term, mult) in query.terms() {
        let tf = index.term_frequency(term, doc_id);
        if tf > 0 {
            score += mult as f64 * (index.idf(term) * bm25_tf(tf, dl, index.avgdl, index.params));
        }
    }
    score
}

/// Scores for every document, accumulated term-at-a-time.
pub fn score_all(index: &InvertedIndex, query: &ExpandedQuery) -> Vec<f64> {
    let mut scores = vec![0.0; index.doc_count() as usize];
    for (term, mult) in query.terms() {
        let idf = index.idf(term);
        for p in index.postings(term) {
            let dl = index.doc_length(p.doc_id);
            scores[p.doc_id as usize] += mult as f64 * (idf * bm25_tf(p.tf, dl, index.avgdl, index.params));
        }
    }
    scores
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: u64,
    pub score: f64,
}

/// Up to `n` positive-score documents, score-descending then doc id.
pub fn retrieve_top_n(index: &InvertedIndex, query: &ExpandedQuery, n: usize) -> Vec<ScoredDoc> {
    let mut ranked: Vec<ScoredDoc> = score_all(index, query)
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .map(|(id, score)| ScoredDoc { doc_id: id as u64, score })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id)));
    ranked.truncate(n);
    ranked
}

/// Greedily take documents in retrieval order until the next one would
/// exceed `token_budget`. Selected documents get fresh dense ids and keep
/// their source id in `origin`.
pub fn select_corpus(
    index: &InvertedIndex,
    store: &CorpusStore,
    query: &ExpandedQuery,
    token_budget: u64,
) -> Result<CorpusStore> {
    if token_budget == 0 {
        return Err(Error::InvalidArgument("token budget must be >= 1".into()));
    }
    check_store_matches(index, store)?;
    let ranked = retrieve_top_n(index, query, store.len());
    let first = ranked.first().ok_or(Error::NoPositiveScore { query_terms: query.distinct_terms() })?;
    let first_len = index.doc_length(first.doc_id);
    if first_len > token_budget {
        return Err(Error::BudgetTooSmall { budget: token_budget, doc_id: first.doc_id, doc_tokens: first_len });
    }
    Ok(take_within_budget(store, ranked.iter().map(|r| r.doc_id), token_budget))
}

/// Baseline selection of equal size: documents in seeded random order,
/// taken greedily under the same budget rule.
pub fn select_random(store: &CorpusStore, token_budget: u64, seed: u64) -> CorpusStore {
    let mut order: Vec<u64> = (0..store.len() as u64).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    take_within_budget(store, order.into_iter(), token_budget)
}

fn take_within_budget(store: &CorpusStore, order: impl Iterator<Item = u64>, budget: u64) -> CorpusStore {
    let mut used = 0;
    let mut picked = Vec::new();
    for doc_id in order {
        let doc = &store.documents()[doc_id as usize];
        if used + doc.token_count > budget {
            break;
        }
        used += doc.token_count;
        picked.push(Document { origin: Some(doc.doc_id), ..doc.clone() });
    }
    CorpusStore::from_documents(store.tokenizer_id(), picked)
}

fn check_store_matches(index: &InvertedIndex, store: &CorpusStore) -> Result<()> {
    let consistent = store.len() as u64 == index.doc_count()
        && store.tokenizer_id() == index.tokenizer_id()
        && store.iter().zip(index.doc_lengths()).all(|(d, &l)| d.token_count == l);
    if consistent {
        Ok(())
    } else {
        Err(Error::InvalidArgument("index was not built from this corpus store".into()))
    }
}

pub fn index_to_bytes(index: &InvertedIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.push(INDEX_VERSION);
    out.extend_from_slice(&index.doc_count().to_le_bytes());
    out.extend_from_slice(&index.total_tokens.to_le_bytes());
    for &len in &index.doc_lengths {
        out.extend_from_slice(&len.to_le_bytes());
    }
    out.extend_from_slice(&index.avgdl.to_le_bytes());
    out.extend_from_slice(&index.params.k1.to_le_bytes());
    out.extend_from_slice(&index.params.b.to_le_bytes());
    put_str(&mut out, &index.tokenizer_id);
    out.extend_from_slice(&(index.postings.len() as u64).to_le_bytes());
    for (term, list) in &index.postings {
        put_str(&mut out, term);
        out.extend_from_slice(&(list.len() as u64).to_le_bytes());
        let mut prev = 0;
        for p in list {
            put_varint(&mut out, p.doc_id - prev);
            out.extend_from_slice(&p.tf.to_le_bytes());
            prev = p.doc_id;
        }
    }
    let crc = checksum64(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<InvertedIndex> {
    if bytes.len() < 6 {
        if bytes == &INDEX_MAGIC[..bytes.len().min(5)] {
            return Err(Error::Truncated("index header incomplete".into()));
        }
        return Err(Error::Format("not an index file".into()));
    }
    if &bytes[..5] != INDEX_MAGIC {
        return Err(Error::Format("bad index magic".into()));
    }
    if bytes[5] != INDEX_VERSION {
        return Err(Error::Version { found: bytes[5].wrapping_sub(b'0') as u32, expected: 1 });
    }
    if bytes.len() < 14 {
        return Err(Error::Truncated("index shorter than header and checksum".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let mut r = Reader { buf: payload, pos: 6 };
    // Parse first so a cut-off file reports truncation rather than a
    // checksum failure.
    let parsed = parse_index_body(&mut r);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = checksum64(payload);
    match parsed {
        Err(e) => Err(e),
        Ok(_) if r.pos != payload.len() => {
            if stored != computed {
                Err(Error::Checksum { stored, computed })
            } else {
                Err(Error::Format("trailing bytes after postings".into()))
            }
        }
        Ok(_) if stored != computed => Err(Error::Checksum { stored, computed }),
        Ok(index) => Ok(index),
    }
}

fn parse_index_body(r: &mut Reader<'_>) -> Result<InvertedIndex> {
    let n = r.u64()?;
    let total_tokens = r.u64()?;
    let mut doc_lengths = Vec::with_capacity(n.min(1 << 24) as usize);
    for _ in 0..n {
        doc_lengths.push(r.u64()?);
    }
    let avgdl = r.f64()?;
    let params = Bm25Params { k1: r.f64()?, b: r.f64()? };
    let tokenizer_id = r.string()?;
    let term_count = r.u64()?;
    let mut postings = BTreeMap::new();
    for _ in 0..term_count {
        let term = r.string()?;
        let len = r.u64()?;
        let mut list = Vec::with_capacity(len.min(n) as usize);
        let mut doc_id = 0u64;
        for i in 0..len {
            let delta = r.varint()?;
            if i > 0 && delta == 0 {
                return Err(Error::Format(format!("postings of {term:?} not strictly increasing")));
            }
            doc_id += delta;
            if doc_id >= n {
                return Err(Error::Format(format!("posting doc id {doc_id} out of range")));
            }
            list.push(Posting { doc_id, tf: r.u32()? });
        }
        postings.insert(term, list);
    }
    if doc_lengths.iter().sum::<u64>() != total_tokens {
        return Err(Error::Format("document lengths disagree with total token count".into()));
    }
    Ok(InvertedIndex { postings, doc_lengths, total_tokens, avgdl, params, tokenizer_id })
}

pub fn save_index(index: &InvertedIndex, path: &Path) -> Result<()> {
    fs::write(path, index_to_bytes(index)).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<InvertedIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    index_from_bytes(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format("term is not UTF-8".into()))
    }

    fn varint(&mut self) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let byte = self.take(1)?[0];
            v |= ((byte & 0x7f) as u64) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Format("varint longer than 10 bytes".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keywords::fuse;
    use crate::tokenizer::CjkCharTokenizer;

    fn store_of(texts: &[&str]) -> CorpusStore {
        let docs = texts
            .iter()
            .map(|t| Document {
                doc_id: 0,
                title: String::new(),
                text: t.to_string(),
                token_count: CjkCharTokenizer.tokenize(t).len() as u64,
                origin: None,
            })
            .collect();
        CorpusStore::from_documents("cjk-char-v1", docs)
    }

    fn index_of(texts: &[&str]) -> InvertedIndex {
        build_index(&store_of(texts), &CjkCharTokenizer, Bm25Params::default()).unwrap()
    }

    fn q(terms: &[&str]) -> ExpandedQuery {
        let mut q = ExpandedQuery::new();
        for t in terms {
            q.add(*t, 1);
        }
        q
    }

    #[test]
    fn single_doc_postings() {
        let idx = index_of(&["a b a"]);
        assert_eq!(idx.postings("a"), [Posting { doc_id: 0, tf: 2 }]);
        assert_eq!(idx.postings("b"), [Posting { doc_id: 0, tf: 1 }]);
        assert_eq!(idx.doc_count(), 1);
        assert_eq!(idx.avgdl(), 3.0);
    }

    #[test]
    fn avgdl_two_docs() {
        assert_eq!(index_of(&["x y", "x y z w"]).avgdl(), 3.0);
    }

    #[test]
    fn empty_store_rejected() {
        let err = build_index(&store_of(&[]), &CjkCharTokenizer, Bm25Params::default());
        assert!(matches!(err, Err(Error::EmptyCorpus)));
    }

    #[test]
    fn bad_params_rejected() {
        let s = store_of(&["a"]);
        assert!(build_index(&s, &CjkCharTokenizer, Bm25Params { k1: 0.0, b: 0.5 }).is_err());
        assert!(build_index(&s, &CjkCharTokenizer, Bm25Params { k1: 1.0, b: 1.5 }).is_err());
    }

    #[test]
    fn hand_computed_score() {
        let idx = index_of(&["a a b"]);
        let idf = (4.0f64 / 3.0).ln();
        assert!((idf - 0.28768).abs() < 1e-5);
        let tf = 2.0 * 2.2 / (2.0 + 1.2);
        assert_eq!(tf, 1.375);
        let s = bm25_score(&idx, 0, &q(&["a"]));
        assert!((s - idf * tf).abs() < 1e-12);
        assert!((s - 0.39556).abs() < 1e-5);
        assert_eq!(bm25_score(&idx, 0, &q(&["a", "a"])), 2.0 * s);
    }

    #[test]
    fn missing_terms_score_zero() {
        let idx = index_of(&["a a b"]);
        assert_eq!(bm25_score(&idx, 0, &q(&["zzz"])), 0.0);
        assert!(retrieve_top_n(&idx, &q(&["zzz"]), 5).is_empty());
    }

    #[test]
    fn repetition_counts() {
        assert_eq!(repetitions(1.0), 1);
        assert_eq!(repetitions(1.0 + 10f64.ln()), 3);
        assert_eq!(repetitions(1.0 + 100f64.ln()), 3);
        assert_eq!(repetitions(2.9), 2);
        assert_eq!(repetitions(0.3), 1);
    }

    #[test]
    fn expand_multi_token_keywords() {
        let task = BTreeMap::from([("甘草".to_string(), 10)]);
        let set = fuse(&task, &["草药"]).unwrap();
        let q = expand_query(&set, &CjkCharTokenizer);
        assert_eq!(q.multiplicity("甘"), 3);
        assert_eq!(q.multiplicity("草"), 4);
        assert_eq!(q.multiplicity("药"), 1);
    }

    #[test]
    fn only_matching_doc_returned() {
        let idx = index_of(&["x y z", "u v w", "p q r", "甘 v w"]);
        let hits = retrieve_top_n(&idx, &q(&["甘"]), 10);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].doc_id, 3);
        assert!(hits[0].score > 0.0);
    }

    #[test]
    fn ties_ordered_by_doc_id() {
        let idx = index_of(&["x y", "a b c", "a b c"]);
        let hits = retrieve_top_n(&idx, &q(&["a"]), 10);
        assert_eq!(hits.iter().map(|h| h.doc_id).collect::<Vec<_>>(), [1, 2]);
        assert_eq!(hits[0].score, hits[1].score);
    }

    #[test]
    fn b_zero_ignores_length() {
        let s = store_of(&["a x", "a x y z w v"]);
        let idx = build_index(&s, &CjkCharTokenizer, Bm25Params { k1: 1.2, b: 0.0 }).unwrap();
        assert_eq!(bm25_score(&idx, 0, &q(&["a"])), bm25_score(&idx, 1, &q(&["a"])));
    }

    #[test]
    fn selection_budget_rules() {
        let texts = ["a a a b", "a c", "d e f", "a"];
        let store = store_of(&texts);
        let idx = build_index(&store, &CjkCharTokenizer, Bm25Params::default()).unwrap();
        let query = q(&["a"]);
        let all = select_corpus(&idx, &store, &query, 1000).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.iter().all(|d| d.origin.is_some() && d.origin != Some(2)));
        assert_eq!(all.iter().map(|d| d.doc_id).collect::<Vec<_>>(), [0, 1, 2]);

        let top = retrieve_top_n(&idx, &query, 1)[0];
        let top_len = idx.doc_length(top.doc_id);
        match select_corpus(&idx, &store, &query, top_len - 1) {
            Err(Error::BudgetTooSmall { doc_id, .. }) => assert_eq!(doc_id, top.doc_id),
            other => panic!("unexpected {other:?}"),
        }
        let err = select_corpus(&idx, &store, &q(&["zz"]), 10).unwrap_err();
        assert!(err.to_string().contains("no positive-score documents"));
    }

    #[test]
    fn index_round_trip_and_determinism() {
        let idx = index_of(&["甘草 甘草 黄芪", "人参 x y", "甘 a b c d e f g h i j k l m n o p q r s t u v w"]);
        let bytes = index_to_bytes(&idx);
        let back = index_from_bytes(&bytes).unwrap();
        assert_eq!(back, idx);
        assert_eq!(index_to_bytes(&back), bytes);
        let query = q(&["甘", "草", "x"]);
        let a: Vec<u64> = score_all(&idx, &query).iter().map(|s| s.to_bits()).collect();
        let b: Vec<u64> = score_all(&back, &query).iter().map(|s| s.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn index_corruption_errors() {
        let bytes = index_to_bytes(&index_of(&["甘草 甘草 黄芪", "人参 x y"]));
        for cut in [3, 10, 40, bytes.len() - 9, bytes.len() - 1] {
            let err = index_from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Truncated(_) | Error::Checksum { .. }), "cut {cut}: {err:?}");
        }
        assert!(matches!(index_from_bytes(&bytes[..40]), Err(Error::Truncated(_))));

        let mut flipped = bytes.clone();
        let mid = flipped.len() - 12;
        flipped[mid] ^= 0x01;
        assert!(matches!(index_from_bytes(&flipped), Err(Error::Checksum { .. } | Error::Format(_))));

        let mut wrong_version = bytes.clone();
        wrong_version[5] = b'2';
        assert!(matches!(index_from_bytes(&wrong_version), Err(Error::Version { found: 2, .. })));
        let mut wrong_magic = bytes;
        wrong_magic[0] = b'Z';
        assert!(matches!(index_from_bytes(&wrong_magic), Err(Error::Format(_))));
    }

    #[test]
    fn varint_round_trip() {
        for v in [0u64, 1, 127, 128, 300, u32::MAX as u64, u64::MAX] {
            let mut buf = Vec::new();
            put_varint(&mut buf, v);
            let mut r = Reader { buf: &buf, pos: 0 };
            assert_eq!(r.varint().unwrap(), v);
            assert_eq!(r.pos, buf.len());
        }
    }
}
