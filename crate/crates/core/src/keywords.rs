//! Task keyword extraction with TextRank, lexicon fusion and
//! occurrence-count weighting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tokenizer::{is_cjk, Tokenizer};

/// Undirected co-occurrence graph over candidate tokens.
///
/// Nodes are numbered in order of first appearance. Edge weights count how
/// often two distinct tokens appeared within the sliding window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CooccurrenceGraph {
    nodes: Vec<String>,
    adjacency: Vec<BTreeMap<usize, u32>>,
}

impl CooccurrenceGraph {
    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.adjacency[node].iter().map(|(&n, &w)| (n, w))
    }

    pub fn weight(&self, a: &str, b: &str) -> Option<u32> {
        let ia = self.nodes.iter().position(|n| n == a)?;
        let ib = self.nodes.iter().position(|n| n == b)?;
        self.adjacency[ia].get(&ib).copied()
    }

    /// Edges as `(u, v, weight)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, adj)| adj.iter().filter(move |(&v, _)| u < v).map(move |(&v, &w)| (u, v, w)))
    }

    /// Build a graph from an explicit node list and undirected edges. Edges
    /// listed twice have their weights added; self-loops are ignored.
    pub fn from_edges(nodes: Vec<String>, edges: &[(usize, usize, u32)]) -> Self {
        let mut adjacency = vec![BTreeMap::new(); nodes.len()];
        for &(u, v, w) in edges {
            if u == v || w == 0 {
                continue;
            }
            *adjacency[u].entry(v).or_insert(0) += w;
            *adjacency[v].entry(u).or_insert(0) += w;
        }
        Self { nodes, adjacency }
    }
}

/// Build the co-occurrence graph of `tokens`. Two tokens are joined when
/// their positions differ by less than `window`; callers filter candidates
/// beforehand.
pub fn build_graph<S: AsRef<str>>(tokens: &[S], window: usize) -> Result<CooccurrenceGraph> {
    if window < 2 {
        return Err(Error::InvalidArgument(format!("co-occurrence window must be >= 2, got {window}")));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let ids: Vec<usize> = tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            *index.entry(t).or_insert_with(|| {
                nodes.push(t.to_string());
                nodes.len() - 1
            })
        })
        .collect();

    let mut adjacency = vec![BTreeMap::new(); nodes.len()];
    for (i, &u) in ids.iter().enumerate() {
        for &v in ids.iter().skip(i + 1).take(window - 1) {
            if u != v {
                *adjacency[u].entry(v).or_insert(0u32) += 1;
                *adjacency[v].entry(u).or_insert(0u32) += 1;
            }
        }
    }
    Ok(CooccurrenceGraph { nodes, adjacency })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextRankParams {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TextRankParams {
    fn default() -> Self {
        Self { damping: 0.85, tol: 1e-6, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextRankScores {
    /// One score per graph node, in node order.
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl TextRankScores {
    pub fn named<'g>(&self, graph: &'g CooccurrenceGraph) -> Vec<(&'g str, f64)> {
        graph.nodes().iter().map(String::as_str).zip(self.scores.iter().copied()).collect()
    }
}

/// Weighted TextRank, iterated synchronously from all-ones.
///
/// `WS(v) = (1 - d) + d * sum_{u ~ v} w_uv / (sum_{x ~ u} w_ux) * WS(u)`
///
/// Neighbor contributions are summed in ascending value order, so the
/// result does not depend on how nodes are numbered.
pub fn textrank(graph: &CooccurrenceGraph, params: TextRankParams) -> Result<TextRankScores> {
    let TextRankParams { damping: d, tol, max_iter } = params;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::InvalidArgument(format!("damping must lie in (0, 1), got {d}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }

    let n = graph.node_count();
    let out_weight: Vec<f64> = (0..n).map(|u| graph.neighbors(u).map(|(_, w)| w as u64).sum::<u64>() as f64).collect();
    let mut scores = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut contributions = Vec::new();
    let mut iterations = 0;
    let mut converged = n == 0;

    while !converged && iterations < max_iter {
        for (v, slot) in next.iter_mut().enumerate() {
            contributions.clear();
            contributions.extend(graph.neighbors(v).map(|(u, w)| w as f64 / out_weight[u] * scores[u]));
            contributions.sort_by(f64::total_cmp);
            *slot = (1.0 - d) + d * contributions.iter().sum::<f64>();
        }
        let delta = scores.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut scores, &mut next);
        iterations += 1;
        converged = delta < tol;
    }
    Ok(TextRankScores { scores, iterations, converged })
}

/// The `k` highest-scoring tokens, score-descending with ties broken by
/// ascending token order.
pub fn top_k_keywords<S: AsRef<str>>(scores: &[(S, f64)], k: usize) -> Vec<String> {
    let mut ranked: Vec<(&str, f64)> = scores.iter().map(|(t, s)| (t.as_ref(), *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(t, _)| t.to_string()).collect()
}

const DEFAULT_STOPWORDS: &[&str] = &[
    // Chinese function characters
    "的", "了", "是", "在", "和", "与", "及", "或", "之", "为", "其", "而", "也", "有", "不", "这", "那", "一", "个",
    "上", "下", "中", "以", "等", "于", "对", "从", "把", "被", "将", "所", "并", "则", "即", "就", "都", "且", "者",
    "称", "何", "哪", "些", "我", "你", "他", "她", "它", "们", "可", "能", "会", "要", "由", "因", "此", "如", "若",
    "但", "又", "还", "很", "最", "更", "到", "说", "着", "过", "给", "向", "使", "用", "得", "地", "每", "各", "该",
    // English
    "the", "of", "and", "or", "to", "in", "is", "are", "was", "were", "be", "for", "on", "with", "as", "by", "at",
    "an", "this", "that", "it", "from", "which",
];

/// Drops stopwords and single-character Latin tokens.
#[derive(Debug, Clone)]
pub struct CandidateFilter {
    stopwords: HashSet<String>,
}

impl Default for CandidateFilter {
    fn default() -> Self {
        Self::with_stopwords(DEFAULT_STOPWORDS.iter().copied())
    }
}

impl CandidateFilter {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { stopwords: words.into_iter().map(Into::into).collect() }
    }

    pub fn keep(&self, token: &str) -> bool {
        let mut chars = token.chars();
        let single_latin = matches!((chars.next(), chars.next()), (Some(c), None) if c.is_alphabetic() && !is_cjk(c));
        !single_latin && !self.stopwords.contains(token)
    }

    pub fn filter(&self, tokens: Vec<String>) -> Vec<String> {
        tokens.into_iter().filter(|t| self.keep(t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExtractOptions {
    pub window: usize,
    pub top_k: usize,
    pub textrank: TextRankParams,
    pub filter: CandidateFilter,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self { window: 5, top_k: 5, textrank: TextRankParams::default(), filter: CandidateFilter::default() }
    }
}

/// Top-k keywords of a single sample.
pub fn sample_keywords(sample: &str, tokenizer: &dyn Tokenizer, opts: &ExtractOptions) -> Result<Vec<String>> {
    let tokens = opts.filter.filter(tokenizer.tokenize(sample));
    let graph = build_graph(&tokens, opts.window)?;
    let scores = textrank(&graph, opts.textrank)?;
    Ok(top_k_keywords(&scores.named(&graph), opts.top_k))
}

/// Run TextRank over every sample and count, per keyword, the number of
/// samples whose top-k list contains it.
pub fn extract_task_keywords<S: AsRef<str> + Sync>(
    samples: &[S],
    tokenizer: &dyn Tokenizer,
    opts: &ExtractOptions,
) -> Result<BTreeMap<String, u64>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no task samples given".into()));
    }
    if opts.top_k == 0 {
        return Err(Error::InvalidArgument("top_k must be >= 1".into()));
    }
    let per_sample: Vec<Vec<String>> = samples
        .par_iter()
        .map(|s| sample_keywords(s.as_ref(), tokenizer, opts))
        .collect::<Result<_>>()?;

    let mut counts = BTreeMap::new();
    for keywords in per_sample {
        for kw in keywords {
            *counts.entry(kw).or_insert(0) += 1;
        }
    }
    Ok(counts)
}

/// `1 + ln(n)` for a keyword seen in `n >= 1` samples.
pub fn keyword_weight(count: u64) -> Result<f64> {
    if count == 0 {
        return Err(Error::ZeroCount);
    }
    Ok(1.0 + (count as f64).ln())
}

pub const LEXICON_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Task,
    Lexicon,
    Both,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Task => "task",
            Provenance::Lexicon => "lexicon",
            Provenance::Both => "both",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task" => Ok(Provenance::Task),
            "lexicon" => Ok(Provenance::Lexicon),
            "both" => Ok(Provenance::Both),
            other => Err(Error::Format(format!("unknown provenance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedKeyword {
    pub keyword: String,
    /// Number of task samples listing this keyword; 0 for lexicon-only entries.
    pub count: u64,
    pub weight: f64,
    pub provenance: Provenance,
}

/// Fused domain keyword set, ordered by weight descending then keyword.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DomainKeywordSet {
    entries: Vec<WeightedKeyword>,
}

impl DomainKeywordSet {
    pub fn from_entries(mut entries: Vec<WeightedKeyword>) -> Result<Self> {
        entries.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.keyword.cmp(&b.keyword)));
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.keyword.as_str()) {
                return Err(Error::Format(format!("duplicate keyword {:?}", e.keyword)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[WeightedKeyword] {
        &self.entries
    }

    pub fn get(&self, keyword: &str) -> Option<&WeightedKeyword> {
        self.entries.iter().find(|e| e.keyword == keyword)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Union of task keywords and a lexicon. Keywords in both keep the task
/// count and weight; lexicon-only keywords get weight 1.
pub fn fuse<S: AsRef<str>>(task: &BTreeMap<String, u64>, lexicon: &[S]) -> Result<DomainKeywordSet> {
    let lexicon: HashSet<&str> = lexicon.iter().map(AsRef::as_ref).filter(|w| !w.is_empty()).collect();
    let mut entries = Vec::with_capacity(task.len() + lexicon.len());
    for (kw, &count) in task {
        let provenance = if lexicon.contains(kw.as_str()) { Provenance::Both } else { Provenance::Task };
        entries.push(WeightedKeyword { keyword: kw.clone(), count, weight: keyword_weight(count)?, provenance });
    }
    for word in lexicon {
        if !task.contains_key(word) {
            entries.push(WeightedKeyword {
                keyword: word.to_string(),
                count: 0,
                weight: LEXICON_WEIGHT,
                provenance: Provenance::Lexicon,
            });
        }
    }
    DomainKeywordSet::from_entries(entries)
}

/// One word per line; blank lines skipped, surrounding whitespace trimmed.
pub fn read_lexicon(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

/// `keyword<TAB>count<TAB>weight<TAB>provenance` per line.
pub fn keywords_to_string(set: &DomainKeywordSet) -> String {
    let mut out = String::new();
    for e in set.entries() {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", e.keyword, e.count, e.weight, e.provenance));
    }
    out
}

pub fn keywords_from_str(text: &str) -> Result<DomainKeywordSet> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let count = f[1].parse().map_err(|_| parse_err(format!("bad count {:?}", f[1])))?;
        let weight: f64 = f[2].parse().map_err(|_| parse_err(format!("bad weight {:?}", f[2])))?;
        if !(weight >= 0.0) {
            return Err(parse_err(format!("negative weight {weight}")));
        }
        entries.push(WeightedKeyword { keyword: f[0].to_string(), count, weight, provenance: f[3].parse()? });
    }
    DomainKeywordSet::from_entries(entries)
}

pub fn write_keywords(set: &DomainKeywordSet, path: &Path) -> Result<()> {
    fs::write(path, keywords_to_string(set)).map_err(|e| Error::io(path, e))
}

pub fn read_keywords(path: &Path) -> Result<DomainKeywordSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    keywords_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::CjkCharTokenizer;
    use proptest::prelude::*;

    fn path_graph() -> CooccurrenceGraph {
        CooccurrenceGraph::from_edges(vec!["a".into(), "b".into(), "c".into()], &[(0, 1, 1), (1, 2, 1)])
    }

    #[test]
    fn graph_pair() {
        let g = build_graph(&["a", "b"], 2).unwrap();
        assert_eq!(g.weight("a", "b"), Some(1));
        assert_eq!(g.edges().count(), 1);
    }

    #[test]
    fn graph_no_self_edges() {
        let g = build_graph(&["a", "b", "a"], 2).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.weight("a", "b"), Some(2));
        assert_eq!(g.weight("a", "a"), None);
    }

    #[test]
    fn graph_empty_and_window_bound() {
        let g = build_graph::<&str>(&[], 5).unwrap();
        assert_eq!(g.node_count(), 0);
        assert!(build_graph(&["a"], 1).is_err());
    }

    #[test]
    fn graph_window_reach() {
        let g = build_graph(&["a", "b", "c", "d"], 3).unwrap();
        assert_eq!(g.weight("a", "c"), Some(1));
        assert_eq!(g.weight("a", "d"), None);
    }

    #[test]
    fn textrank_two_nodes() {
        let g = build_graph(&["a", "b"], 2).unwrap();
        let r = textrank(&g, TextRankParams::default()).unwrap();
        assert!(r.converged);
        for s in r.scores {
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn textrank_path_matches_fixed_point() {
        // x = 0.15 + 0.425 y, y = 0.15 + 1.7 x
        let x = 0.21375 / 0.2775;
        let y = 0.15 + 1.7 * x;
        let r = textrank(&path_graph(), TextRankParams::default()).unwrap();
        assert!(r.converged && r.iterations < 100);
        assert!((r.scores[0] - x).abs() < 1e-5);
        assert!((r.scores[1] - y).abs() < 1e-5);
        assert_eq!(r.scores[0], r.scores[2]);
        assert!((x - 0.7703).abs() < 1e-4 && (y - 1.4595).abs() < 1e-4);
    }

    #[test]
    fn textrank_isolated_node() {
        let g = CooccurrenceGraph::from_edges(vec!["z".into()], &[]);
        let r = textrank(&g, TextRankParams::default()).unwrap();
        assert_eq!(r.scores, [1.0 - 0.85]);
    }

    #[test]
    fn textrank_rejects_bad_params() {
        let g = path_graph();
        assert!(textrank(&g, TextRankParams { damping: 1.0, ..Default::default() }).is_err());
        assert!(textrank(&g, TextRankParams { tol: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn top_k_tie_break() {
        let scores = [("a", 1.4), ("c", 0.7), ("b", 0.7)];
        assert_eq!(top_k_keywords(&scores, 2), ["a", "b"]);
        assert_eq!(top_k_keywords(&[("a", 1.0)], 5), ["a"]);
        let r = textrank(&path_graph(), TextRankParams::default()).unwrap();
        assert_eq!(top_k_keywords(&r.named(&path_graph()), 1), ["b"]);
    }

    #[test]
    fn weights() {
        assert_eq!(keyword_weight(1).unwrap(), 1.0);
        assert!((keyword_weight(10).unwrap() - 3.302585).abs() < 1e-6);
        assert!((keyword_weight(100).unwrap() - 5.605170).abs() < 1e-6);
        assert!(matches!(keyword_weight(0), Err(Error::ZeroCount)));
    }

    #[test]
    fn candidate_filter() {
        let f = CandidateFilter::default();
        assert!(!f.keep("a"));
        assert!(!f.keep("的"));
        assert!(f.keep("脉"));
        assert!(f.keep("bm25"));
    }

    #[test]
    fn single_sample_counts() {
        let counts = extract_task_keywords(&["脉在筋骨乍疏乍密散乱无序者称为何脉"], &CjkCharTokenizer, &ExtractOptions::default()).unwrap();
        assert_eq!(counts.get("脉"), Some(&1));
        assert_eq!(counts.len(), 5);
        assert!(counts.values().all(|&n| n == 1));
    }

    #[test]
    fn repeated_sample_counts() {
        let samples = vec!["甘草黄芪人参当归川芎白术"; 10];
        let counts = extract_task_keywords(&samples, &CjkCharTokenizer, &ExtractOptions::default()).unwrap();
        assert_eq!(counts.len(), 5);
        for &n in counts.values() {
            assert_eq!(n, 10);
            assert!((keyword_weight(n).unwrap() - 3.3026).abs() < 1e-4);
        }
    }

    #[test]
    fn disjoint_samples() {
        let samples = ["甘草黄芪人参当归川芎", "足球比赛城市交通电脑"];
        let counts = extract_task_keywords(&samples, &CjkCharTokenizer, &ExtractOptions::default()).unwrap();
        assert_eq!(counts.len(), 10);
        assert!(counts.values().all(|&n| n == 1));
    }

    #[test]
    fn fuse_union_rule() {
        let task = BTreeMap::from([("甘草".to_string(), 3)]);
        let set = fuse(&task, &["甘草", "黄芪"]).unwrap();
        assert_eq!(set.len(), 2);
        let g = set.get("甘草").unwrap();
        assert_eq!(g.provenance, Provenance::Both);
        assert_eq!(g.count, 3);
        assert!((g.weight - (1.0 + 3f64.ln())).abs() < 1e-12);
        let h = set.get("黄芪").unwrap();
        assert_eq!((h.weight, h.provenance, h.count), (1.0, Provenance::Lexicon, 0));
    }

    #[test]
    fn fuse_one_side_empty() {
        let set = fuse(&BTreeMap::new(), &["甘草", "黄芪"]).unwrap();
        assert!(set.entries().iter().all(|e| e.weight == 1.0 && e.provenance == Provenance::Lexicon));
        let task = BTreeMap::from([("脉".to_string(), 2), ("骨".to_string(), 1)]);
        let set = fuse::<&str>(&task, &[]).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.entries().iter().all(|e| e.provenance == Provenance::Task));
    }

    #[test]
    fn keyword_file_order_and_round_trip() {
        let task = BTreeMap::from([("脉".to_string(), 10), ("骨".to_string(), 1), ("筋".to_string(), 1)]);
        let set = fuse(&task, &["黄芪", "骨"]).unwrap();
        let text = keywords_to_string(&set);
        let order: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(order, ["脉", "筋", "骨", "黄芪"]);
        assert_eq!(keywords_from_str(&text).unwrap(), set);
        assert!(text.starts_with("脉\t10\t3.302585092994046\ttask\n"));
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, u32)>)> {
        (2usize..9).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n, 1u32..4), 0..20)))
    }

    proptest! {
        #[test]
        fn permutation_equivariance((n, edges) in arb_graph(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
            let g = CooccurrenceGraph::from_edges(names.clone(), &edges);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // node i of g becomes node perm[i] of h
            let mut h_names = vec![String::new(); n];
            for i in 0..n {
                h_names[perm[i]] = names[i].clone();
            }
            let h_edges: Vec<_> = edges.iter().map(|&(u, v, w)| (perm[u], perm[v], w)).collect();
            let h = CooccurrenceGraph::from_edges(h_names, &h_edges);
            let p = TextRankParams::default();
            let sg = textrank(&g, p).unwrap();
            let sh = textrank(&h, p).unwrap();
            for (i, &j) in perm.iter().enumerate() {
                prop_assert_eq!(sg.scores[i].to_bits(), sh.scores[j].to_bits());
            }
            for s in &sg.scores {
                prop_assert!(*s >= 0.15 - 1e-15);
            }
        }

        #[test]
        fn connected_unit_graphs_converge(n in 2usize..12, extra in prop::collection::vec((0usize..12, 0usize..12), 0..10)) {
            let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1)).collect();
            edges.extend(extra.into_iter().filter(|&(u, v)| u < n && v < n).map(|(u, v)| (u, v, 1)));
            let names = (0..n).map(|i| i.to_string()).collect();
            let mut g = CooccurrenceGraph::from_edges(names, &[]);
            // unit weights: collapse duplicate edges
            let mut uniq: Vec<(usize, usize)> = edges.iter().filter(|e| e.0 != e.1).map(|&(u, v, _)| (u.min(v), u.max(v))).collect();
            uniq.sort();
            uniq.dedup();
            g = CooccurrenceGraph::from_edges(g.nodes().to_vec(), &uniq.iter().map(|&(u, v)| (u, v, 1)).collect::<Vec<_>>());
            let r = textrank(&g, TextRankParams::default()).unwrap();
            prop_assert!(r.converged);
        }

        #[test]
        fn weight_strictly_increasing(n in 1u64..1_000_000) {
            prop_assert!(keyword_weight(n + 1).unwrap() > keyword_weight(n).unwrap());
        }

        #[test]
        fn fuse_is_superset(task in prop::collection::btree_map("[a-e]{1,2}", 1u64..20, 0..6), lex in prop::collection::vec("[a-e]{1,2}", 0..6)) {
            let set = fuse(&task, &lex).unwrap();
            for k in task.keys().chain(lex.iter()) {
                prop_assert!(set.get(k).is_some());
            }
            let uniq: HashSet<&str> = set.entries().iter().map(|e| e.keyword.as_str()).collect();
            prop_assert_eq!(uniq.len(), set.len());
        }
    }
}
