//! Next-token negative log-likelihood.
//!
//! `tokens[0]` is always BOS and is never a target; logits row `i - 1`
//! predicts `tokens[i]`. The loss is averaged over target positions.

use ndarray::{Array2, ArrayView2};

use crate::error::{ModelError, Result};
use crate::real::Real;

/// Average NLL over targets `tokens[first_target..]`, plus its gradient
/// with respect to `logits`. Target ids outside that range are never read.
pub fn masked_nll<T: Real>(logits: ArrayView2<'_, T>, tokens: &[u32], first_target: usize) -> Result<(f64, Array2<T>)> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if first_target == 0 || first_target >= tokens.len() {
        return Err(ModelError::NoTargets);
    }
    let (rows, vocab) = logits.dim();
    if rows < tokens.len() - 1 {
        return Err(ModelError::Shape(format!("{rows} logit rows for {} tokens", tokens.len())));
    }
    let count = tokens.len() - first_target;
    let inv = T::from_f64(1.0 / count as f64);
    let mut grad = Array2::zeros(logits.dim());
    let mut total = 0.0f64;
    for (i, &t) in tokens.iter().enumerate().skip(first_target) {
        let t = t as usize;
        if t >= vocab {
            return Err(ModelError::OutOfVocab { id: t as u32, pos: i, vocab });
        }
        let row = logits.row(i - 1);
        let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum: T = row.iter().map(|&x| (x - max).exp()).sum();
        let lse = max + sum.ln();
        total -= (row[t] - lse).to_f64();
        let mut g = grad.row_mut(i - 1);
        for (gv, &x) in g.iter_mut().zip(row) {
            *gv = (x - lse).exp() * inv;
        }
        g[t] -= inv;
    }
    Ok((total / count as f64, grad))
}

/// Causal LM loss over every position after BOS.
pub fn clm_loss<T: Real>(logits: ArrayView2<'_, T>, tokens: &[u32]) -> Result<f64> {
    Ok(masked_nll(logits, tokens, 1)?.0)
}

pub fn clm_loss_and_grad<T: Real>(logits: ArrayView2<'_, T>, tokens: &[u32]) -> Result<(f64, Array2<T>)> {
    masked_nll(logits, tokens, 1)
}

/// Loss on the `response_len` tokens following a `prompt_len`-token prompt;
/// `tokens` must be exactly BOS + prompt + response.
pub fn sft_loss<T: Real>(logits: ArrayView2<'_, T>, tokens: &[u32], prompt_len: usize, response_len: usize) -> Result<f64> {
    Ok(sft_loss_and_grad(logits, tokens, prompt_len, response_len)?.0)
}

pub fn sft_loss_and_grad<T: Real>(
    logits: ArrayView2<'_, T>,
    tokens: &[u32],
    prompt_len: usize,
    response_len: usize,
) -> Result<(f64, Array2<T>)> {
    if response_len == 0 {
        return Err(ModelError::NoTargets);
    }
    if tokens.len() != 1 + prompt_len + response_len {
        return Err(ModelError::Shape(format!(
            "sequence of {} tokens is not BOS + {prompt_len} prompt + {response_len} response",
            tokens.len()
        )));
    }
    masked_nll(logits, tokens, prompt_len + 1)
}
