//! Pluggable tokenizers keyed by a stable identifier.
//!
//! The default tokenizer emits every CJK ideograph as its own token and
//! splits everything else on whitespace and punctuation, lowercasing Latin
//! letters. It needs no dictionary, so its output only depends on the input
//! text.

use crate::error::{Error, Result};

/// A deterministic text-to-token mapping.
pub trait Tokenizer: Send + Sync {
    /// Stable identifier recorded in corpus stores and indexes.
    fn id(&self) -> &str;

    fn tokenize(&self, text: &str) -> Vec<String>;
}

pub const CJK_CHAR_TOKENIZER_ID: &str = "cjk-char-v1";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CjkCharTokenizer;

impl Tokenizer for CjkCharTokenizer {
    fn id(&self) -> &str {
        CJK_CHAR_TOKENIZER_ID
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens = Vec::new();
        let mut run = String::new();
        for ch in text.chars() {
            if is_cjk(ch) {
                flush(&mut run, &mut tokens);
                tokens.push(ch.to_string());
            } else if ch.is_alphanumeric() {
                run.extend(ch.to_lowercase());
            } else {
                // whitespace, punctuation, symbols
                flush(&mut run, &mut tokens);
            }
        }
        flush(&mut run, &mut tokens);
        tokens
    }
}

fn flush(run: &mut String, tokens: &mut Vec<String>) {
    if !run.is_empty() {
        tokens.push(std::mem::take(run));
    }
}

/// True for CJK unified ideographs (including extensions and compatibility
/// blocks). Kana and Hangul are treated the same way.
pub fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x3040..=0x30FF       // hiragana, katakana
        | 0x3400..=0x4DBF     // extension A
        | 0x4E00..=0x9FFF     // unified ideographs
        | 0xAC00..=0xD7AF     // hangul syllables
        | 0xF900..=0xFAFF     // compatibility ideographs
        | 0x20000..=0x2FA1F)  // extensions B-F, compatibility supplement
}

/// Look up a tokenizer by the identifier stored in an artifact.
pub fn tokenizer_by_id(id: &str) -> Result<Box<dyn Tokenizer>> {
    match id {
        CJK_CHAR_TOKENIZER_ID => Ok(Box::new(CjkCharTokenizer)),
        other => Err(Error::UnknownTokenizer(other.to_string())),
    }
}

/// Join tokens back into readable text: CJK tokens are concatenated, other
/// adjacent tokens are separated by a single space.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev_cjk = true;
    for tok in tokens {
        let tok = tok.as_ref();
        let cjk = tok.chars().next().is_some_and(is_cjk);
        if !out.is_empty() && !cjk && !prev_cjk {
            out.push(' ');
        }
        out.push_str(tok);
        prev_cjk = cjk;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        CjkCharTokenizer.tokenize(s)
    }

    #[test]
    fn cjk_is_per_codepoint() {
        assert_eq!(toks("脉在筋骨"), ["脉", "在", "筋", "骨"]);
    }

    #[test]
    fn latin_split_and_lowercased() {
        assert_eq!(toks("BM25 score"), ["bm25", "score"]);
        assert_eq!(toks("Hello,world!x"), ["hello", "world", "x"]);
    }

    #[test]
    fn empty_input() {
        assert!(toks("").is_empty());
        assert!(toks("  ,。 ").is_empty());
    }

    #[test]
    fn mixed_runs() {
        assert_eq!(toks("用BM25检索"), ["用", "bm25", "检", "索"]);
    }

    #[test]
    fn lookup_by_id() {
        assert_eq!(tokenizer_by_id(CJK_CHAR_TOKENIZER_ID).unwrap().id(), CJK_CHAR_TOKENIZER_ID);
        assert!(tokenizer_by_id("jieba").is_err());
    }

    #[test]
    fn detokenize_spacing() {
        assert_eq!(detokenize(&["正", "确", "a", "b", "脉"]), "正确a b脉");
    }
}
