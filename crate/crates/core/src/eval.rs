//! Multiple-choice evaluation: item construction, prompt formatting,
//! answer extraction and accuracy.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 5;
pub const DIAGNOSIS_DISTRACTORS: usize = 4;

pub const OPTIONS_HEADER: &str = "回答选项：";
pub const ANSWER_INSTRUCTION: &str = "请分析并给出正确选项。";
pub const DIAGNOSIS_INSTRUCTION: &str = "请根据以上患者信息，从下列疾病中选择最可能的诊断。";

/// Option label `A`, `B`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(char);

impl Label {
    pub fn from_index(i: usize) -> Self {
        assert!(i < 26, "label index {i} out of range");
        Label((b'A' + i as u8) as char)
    }

    pub fn index(self) -> usize {
        (self.0 as u8 - b'A') as usize
    }

    pub fn as_char(self) -> char {
        self.0
    }
}

impl TryFrom<char> for Label {
    type Error = Error;

    fn try_from(c: char) -> Result<Self> {
        if c.is_ascii_uppercase() {
            Ok(Label(c))
        } else {
            Err(Error::Format(format!("invalid option label {c:?}")))
        }
    }
}

impl TryFrom<String> for Label {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Label::try_from(c),
            _ => Err(Error::Format(format!("invalid option label {s:?}"))),
        }
    }
}

impl From<Label> for String {
    fn from(l: Label) -> String {
        l.0.to_string()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McqItem {
    stem: String,
    options: Vec<String>,
    gold: Label,
}

impl McqItem {
    pub fn new(stem: impl Into<String>, options: Vec<String>, gold: Label) -> Result<Self> {
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&options.len()) {
            return Err(Error::InvalidArgument(format!(
                "an item needs {MIN_OPTIONS}-{MAX_OPTIONS} options, got {}",
                options.len()
            )));
        }
        if gold.index() >= options.len() {
            return Err(Error::InvalidArgument(format!("gold label {gold} not among {} options", options.len())));
        }
        Ok(Self { stem: stem.into(), options, gold })
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    pub fn gold(&self) -> Label {
        self.gold
    }

    pub fn gold_text(&self) -> &str {
        &self.options[self.gold.index()]
    }

    /// `(label, text)` pairs in label order.
    pub fn options(&self) -> impl Iterator<Item = (Label, &str)> {
        self.options.iter().enumerate().map(|(i, t)| (Label::from_index(i), t.as_str()))
    }

    pub fn labels(&self) -> Vec<Label> {
        (0..self.options.len()).map(Label::from_index).collect()
    }
}

/// Turn a record with a known diagnosis into a five-option item. Four
/// distractors are drawn from `pool` (excluding the gold diagnosis) and
/// shuffled together with the gold answer.
pub fn build_diagnosis_mcq<S: AsRef<str>>(record: &str, gold: &str, pool: &[S], seed: u64) -> Result<McqItem> {
    let mut candidates: Vec<&str> = pool.iter().map(AsRef::as_ref).filter(|d| *d != gold).collect();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.len() < DIAGNOSIS_DISTRACTORS {
        return Err(Error::PoolTooSmall { needed: DIAGNOSIS_DISTRACTORS, found: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut options: Vec<String> =
        candidates.choose_multiple(&mut rng, DIAGNOSIS_DISTRACTORS).map(|s| s.to_string()).collect();
    options.push(gold.to_string());
    options.shuffle(&mut rng);
    let gold_idx = options.iter().position(|o| o == gold).expect("gold inserted above");
    let stem = format!("{}\n{}", record.trim(), DIAGNOSIS_INSTRUCTION);
    McqItem::new(stem, options, Label::from_index(gold_idx))
}

/// Render an item as a model prompt:
///
/// ```text
/// <stem>
/// 回答选项：A. x; B. y; C. z
/// 请分析并给出正确选项。
/// ```
pub fn format_prompt(item: &McqItem) -> String {
    let mut out = String::new();
    out.push_str(&item.stem);
    out.push('\n');
    out.push_str(OPTIONS_HEADER);
    for (i, (label, text)) in item.options().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{label}. {text}");
    }
    out.push('\n');
    out.push_str(ANSWER_INSTRUCTION);
    out
}

/// Extracted answer, or no recognizable answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Label(Label),
    Abstain,
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prediction::Label(l) => write!(f, "{l}"),
            Prediction::Abstain => f.write_str("ABSTAIN"),
        }
    }
}

static ANSWER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"正确(?:选项|答案)(?:是|为|：|:)\s*([A-Za-z])",
        r"|选\s*([A-Za-z])(?:[^A-Za-z]|$)",
        r"|(?:^|[^A-Za-z0-9])([A-Z])\s*[.．、]",
    ))
    .unwrap()
});

/// Find the predicted option in a free-text response. The last match
/// wins; labels outside `valid` are ignored. Explicit verdict phrases
/// accept lower-case labels, bare labels must be upper case.
pub fn extract_option(response: &str, valid: &[Label]) -> Prediction {
    let mut found = Prediction::Abstain;
    for caps in ANSWER.captures_iter(response) {
        let c = (1..=3).find_map(|g| caps.get(g)).map(|m| m.as_str().chars().next().unwrap().to_ascii_uppercase());
        if let Some(label) = c.and_then(|c| Label::try_from(c).ok()) {
            if valid.contains(&label) {
                found = Prediction::Label(label);
            }
        }
    }
    found
}

/// Anything that answers a prompt with text.
pub trait Responder: Sync {
    fn respond(&self, prompt: &str) -> String;
}

impl<F: Fn(&str) -> String + Sync> Responder for F {
    fn respond(&self, prompt: &str) -> String {
        self(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemResult {
    pub predicted: Prediction,
    pub gold: Label,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub items: Vec<ItemResult>,
    pub accuracy: f64,
    pub abstain_count: usize,
}

impl EvalReport {
    pub fn from_items(items: Vec<ItemResult>) -> Self {
        let correct = items.iter().filter(|r| r.correct).count();
        let abstain_count = items.iter().filter(|r| r.predicted == Prediction::Abstain).count();
        let accuracy = if items.is_empty() { 0.0 } else { correct as f64 / items.len() as f64 };
        Self { items, accuracy, abstain_count }
    }

    pub fn correct(&self) -> usize {
        self.items.iter().filter(|r| r.correct).count()
    }

    pub fn summary_line(&self) -> String {
        format!("accuracy={:.6} n={} abstain={}", self.accuracy, self.items.len(), self.abstain_count)
    }

    /// One `index<TAB>predicted<TAB>gold<TAB>correct` row per item, then
    /// the summary line.
    pub fn render(&self) -> String {
        let mut out = String::from("item\tpredicted\tgold\tcorrect\n");
        for (i, r) in self.items.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{}\t{}\t{}", r.predicted, r.gold, r.correct as u8);
        }
        out.push_str(&self.summary_line());
        out.push('\n');
        out
    }
}

/// Score a responder over `items`; abstentions count as wrong.
pub fn evaluate(responder: &dyn Responder, items: &[McqItem]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no evaluation items".into()));
    }
    let results = items
        .par_iter()
        .map(|item| {
            let response = responder.respond(&format_prompt(item));
            let predicted = extract_option(&response, &item.labels());
            ItemResult { predicted, gold: item.gold, correct: predicted == Prediction::Label(item.gold) }
        })
        .collect();
    Ok(EvalReport::from_items(results))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExamRecord {
    stem: String,
    options: Vec<String>,
    gold: Label,
}

/// JSON lines with `stem`, `options` and `gold`.
pub fn read_exam(path: &Path) -> Result<Vec<McqItem>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    exam_from_str(&text)
}

pub fn exam_from_str(text: &str) -> Result<Vec<McqItem>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let rec: ExamRecord =
                serde_json::from_str(line).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
            McqItem::new(rec.stem, rec.options, rec.gold).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })
        })
        .collect()
}

pub fn exam_to_string(items: &[McqItem]) -> String {
    let mut out = String::new();
    for item in items {
        let rec = ExamRecord { stem: item.stem.clone(), options: item.options.clone(), gold: item.gold };
        out.push_str(&serde_json::to_string(&rec).expect("exam record serializes"));
        out.push('\n');
    }
    out
}
