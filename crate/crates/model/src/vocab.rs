use std::collections::{BTreeMap, HashMap};

use dapt_core::tokenizer::{detokenize, Tokenizer};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

pub const DEFAULT_VOCAB_CAP: usize = 4096;

/// Token-to-id mapping: four special tokens followed by corpus tokens in
/// descending frequency (ties by token order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokenizer_id: String,
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn build(tokenizer_id: &str, frequencies: &BTreeMap<String, u64>, cap: usize) -> Self {
        let mut ranked: Vec<(&String, u64)> = frequencies.iter().map(|(t, &c)| (t, c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().take(cap).map(|(t, _)| t.clone()))
            .collect();
        Self::from_tokens(tokenizer_id, tokens).expect("specials first, no duplicates")
    }

    pub fn from_tokens(tokenizer_id: &str, tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return None;
        }
        let ids: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        if ids.len() != tokens.len() {
            return None;
        }
        Some(Self { tokenizer_id: tokenizer_id.to_string(), tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tokenizer_id(&self) -> &str {
        &self.tokenizer_id
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    /// Token ids of `text`, without BOS/EOS.
    pub fn encode(&self, text: &str, tokenizer: &dyn Tokenizer) -> Vec<u32> {
        tokenizer.tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Text for `ids`, skipping special tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&id| id as usize >= SPECIAL_TOKENS.len())
            .filter_map(|&id| self.tokens.get(id as usize).map(String::as_str))
            .collect();
        detokenize(&toks)
    }
}
