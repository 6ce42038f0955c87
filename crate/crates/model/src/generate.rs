//! Deterministic greedy decoding, exposed as an exam responder.

use dapt_core::eval::Responder;
use dapt_core::Tokenizer;

use crate::error::Result;
use crate::model::Model;
use crate::real::Real;
use crate::vocab::{Vocab, BOS, EOS};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 256;

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax<T: Real>(logits: impl IntoIterator<Item = T>) -> usize {
    let mut best = (0, T::neg_infinity());
    for (i, v) in logits.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Greedy continuation of `prompt` (BOS is prepended). Stops at EOS or after
/// `max_new_tokens`; the context slides when it outgrows the model.
pub fn greedy_decode<T: Real>(model: &Model<T>, prompt: &[u32], max_new_tokens: usize) -> Result<Vec<u32>> {
    let window = model.config().max_seq_len;
    let mut context = Vec::with_capacity(prompt.len() + 1 + max_new_tokens);
    context.push(BOS);
    context.extend_from_slice(prompt);
    let mut generated = Vec::new();
    while generated.len() < max_new_tokens {
        let start = context.len().saturating_sub(window);
        let logits = model.next_token_logits(&context[start..])?;
        let next = argmax(logits.iter().copied()) as u32;
        if next == EOS {
            break;
        }
        generated.push(next);
        context.push(next);
    }
    Ok(generated)
}

pub struct GreedyResponder<'a> {
    pub model: &'a Model<f32>,
    pub vocab: &'a Vocab,
    pub tokenizer: &'a dyn Tokenizer,
    pub max_new_tokens: usize,
}

impl<'a> GreedyResponder<'a> {
    pub fn new(model: &'a Model<f32>, vocab: &'a Vocab, tokenizer: &'a dyn Tokenizer) -> Self {
        Self { model, vocab, tokenizer, max_new_tokens: DEFAULT_MAX_NEW_TOKENS }
    }
}

impl Responder for GreedyResponder<'_> {
    fn respond(&self, prompt: &str) -> String {
        let ids = self.vocab.encode(prompt, self.tokenizer);
        // Ids come from the vocabulary and the window is bounded, so
        // decoding cannot fail.
        let out = greedy_decode(self.model, &ids, self.max_new_tokens).expect("in-vocabulary context within the window");
        self.vocab.decode(&out)
    }
}
