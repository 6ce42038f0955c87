//! Finite-difference verification of the hand-derived gradients on a small
//! reference model in 64-bit arithmetic.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ModelConfig, ProjectionSet};
use crate::error::Result;
use crate::loss::masked_nll;
use crate::lora::gaussian;
use crate::model::{Model, ParamKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Clm,
    /// Supervised loss with this many prompt tokens.
    Sft { prompt_len: usize },
}

impl LossKind {
    fn first_target(self) -> usize {
        match self {
            LossKind::Clm => 1,
            LossKind::Sft { prompt_len } => prompt_len + 1,
        }
    }

    fn label(self) -> String {
        match self {
            LossKind::Clm => "clm".into(),
            LossKind::Sft { prompt_len } => format!("sft(m={prompt_len})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub step: f64,
    pub threshold: f64,
    pub seq_len: usize,
    pub sft_prompt_len: usize,
    /// Also check frozen base tensors.
    pub include_base: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seed: 7, step: 1e-4, threshold: 1e-5, seq_len: 8, sft_prompt_len: 3, include_base: false }
    }
}

/// The d_model = 16, single-layer model with every projection adapted and
/// trainable embeddings, so each kind of trainable tensor is exercised.
pub fn reference_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 8,
        lora_rank: 4,
        lora_alpha: 8.0,
        lora_dropout: 0.0,
        adapted: ProjectionSet::all(),
        train_embeddings: true,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub loss: String,
    /// `fresh` (B = 0 as initialized) or `random-b`.
    pub variant: &'static str,
    pub tensor: String,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub threshold: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.threshold)
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("loss\tvariant\ttensor\tmax_rel_error\tmax_abs_grad\tstatus\n");
        for e in &self.entries {
            let status = if e.max_rel_error < self.threshold { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.3e}\t{:.3e}\t{status}",
                e.loss, e.variant, e.tensor, e.max_rel_error, e.max_abs_grad
            );
        }
        let _ = writeln!(
            out,
            "max_rel_error={:.3e} threshold={:.0e} tensors={} passed={}",
            self.max_error(),
            self.threshold,
            self.entries.len(),
            self.passed()
        );
        out
    }
}

fn loss_of(model: &Model<f64>, tokens: &[u32], kind: LossKind) -> Result<f64> {
    let logits = model.forward(tokens)?;
    Ok(masked_nll(logits.view(), tokens, kind.first_target())?.0)
}

/// Compare analytic and central-difference gradients tensor by tensor.
///
/// The error of a tensor is `max|g - g_fd| / max(max|g|, max|g_fd|)`, which
/// stays meaningful for entries whose true gradient is near zero.
pub fn check_model(model: &Model<f64>, tokens: &[u32], kind: LossKind, step: f64, include_base: bool) -> Result<Vec<(String, f64, f64)>> {
    let wanted: Vec<bool> =
        (0..model.params().len()).map(|i| model.is_trainable(i) || (include_base && model.params()[i].kind == ParamKind::Base)).collect();
    let (logits, cache) = model.forward_train(tokens, None)?;
    let (_, dlogits) = masked_nll(logits.view(), tokens, kind.first_target())?;
    let grads = model.backward(&cache, dlogits.view(), &wanted);

    let ids: Vec<usize> = (0..wanted.len()).filter(|&i| wanted[i]).collect();
    ids.par_iter()
        .map(|&id| {
            let analytic = grads.get(id).expect("wanted gradient present");
            let mut probe = model.clone();
            let mut numeric = Vec::with_capacity(analytic.len());
            for k in 0..analytic.len() {
                let orig = probe.params()[id].value.as_slice().expect("standard layout")[k];
                probe.params_mut()[id].value.as_slice_mut().unwrap()[k] = orig + step;
                let up = loss_of(&probe, tokens, kind)?;
                probe.params_mut()[id].value.as_slice_mut().unwrap()[k] = orig - step;
                let down = loss_of(&probe, tokens, kind)?;
                probe.params_mut()[id].value.as_slice_mut().unwrap()[k] = orig;
                numeric.push((up - down) / (2.0 * step));
            }
            let a = analytic.as_slice().expect("standard layout");
            let scale = a.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
            let diff = a.iter().zip(&numeric).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let rel = if scale == 0.0 { 0.0 } else { diff / scale };
            Ok((model.params()[id].name.clone(), rel, a.iter().fold(0.0f64, |m, v| m.max(v.abs()))))
        })
        .collect()
}

/// Run the full suite: both losses, on the freshly initialized reference
/// model and on a copy whose B factors are randomized.
pub fn gradient_check(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut config = reference_config();
    config.max_seq_len = config.max_seq_len.max(opts.seq_len);
    let fresh = Model::<f64>::new(config.clone(), opts.seed)?;
    let mut randomized = fresh.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    for p in randomized.params_mut() {
        if p.name.ends_with(".lora_b") {
            let shape = (p.value.shape()[0], p.value.shape()[1]);
            p.value = gaussian::<f64, _>(shape, 0.1, &mut rng).into_dyn();
        }
    }
    let tokens: Vec<u32> = (0..opts.seq_len).map(|_| rng.random_range(0..config.vocab_size as u32)).collect();

    let mut entries = Vec::new();
    for kind in [LossKind::Clm, LossKind::Sft { prompt_len: opts.sft_prompt_len }] {
        for (variant, model) in [("fresh", &fresh), ("random-b", &randomized)] {
            for (tensor, max_rel_error, max_abs_grad) in check_model(model, &tokens, kind, opts.step, opts.include_base)? {
                entries.push(GradcheckEntry { loss: kind.label(), variant, tensor, max_rel_error, max_abs_grad });
            }
        }
    }
    Ok(GradcheckReport { entries, threshold: opts.threshold })
}

/// Analytic gradient of the reference model's CLM loss for one tensor.
pub fn analytic_gradient(model: &Model<f64>, tokens: &[u32], name: &str) -> Result<Option<Array2<f64>>> {
    let Some(id) = model.param_id(name) else { return Ok(None) };
    let mut wanted = vec![false; model.params().len()];
    wanted[id] = true;
    let (logits, cache) = model.forward_train(tokens, None)?;
    let (_, dlogits) = masked_nll(logits.view(), tokens, 1)?;
    let g = model.backward(&cache, dlogits.view(), &wanted);
    Ok(g.get(id).and_then(|g| g.clone().into_dimensionality().ok()))
}
