//! Adapter training for both phases: causal LM pretraining on a corpus and
//! supervised fine-tuning on prompt/response pairs.
//!
//! A run is a pure function of (checkpoint, data, config): batch order comes
//! from `(seed, epoch)`, dropout masks from `(seed, step, batch slot)`, and
//! per-sequence gradients are summed in batch order.

use std::fmt;

use dapt_core::sft::SftExample;
use dapt_core::store::CorpusStore;
use dapt_core::Tokenizer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{Checkpoint, Phase};
use crate::error::{ModelError, Result};
use crate::loss::masked_nll;
use crate::model::{Grads, Model};
use crate::optim::{clip_global_norm, Adam};
use crate::vocab::{Vocab, BOS, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub phase: Phase,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Stop after this many optimizer steps in total, if set.
    pub max_steps: Option<u64>,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            phase: Phase::Pretrain,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 2,
            max_seq_len: 256,
            seed: 0,
            clip_norm: 1.0,
            max_steps: None,
        }
    }

    pub fn sft() -> Self {
        Self { phase: Phase::Sft, learning_rate: 5e-5, epochs: 3, ..Self::pretrain() }
    }

    pub fn validate(&self, model: &Model<f32>) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.phase == Phase::Init {
            return bad("training phase must be pretrain or sft".into());
        }
        if self.max_seq_len < 2 || self.max_seq_len > model.config().max_seq_len {
            return bad(format!(
                "max_seq_len {} must lie in [2, {}] for this model",
                self.max_seq_len,
                model.config().max_seq_len
            ));
        }
        Ok(())
    }
}

/// One training sequence, starting with BOS. Targets are
/// `tokens[first_target..]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSequence {
    pub tokens: Vec<u32>,
    pub first_target: usize,
}

impl TrainSequence {
    pub fn target_count(&self) -> usize {
        self.tokens.len() - self.first_target
    }
}

/// Documents joined with EOS into one stream and cut into BOS-led chunks of
/// at most `max_seq_len` tokens.
pub fn pretrain_sequences<'a, I>(texts: I, vocab: &Vocab, tokenizer: &dyn Tokenizer, max_seq_len: usize) -> Vec<TrainSequence>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut stream = Vec::new();
    for text in texts {
        stream.extend(vocab.encode(text, tokenizer));
        stream.push(EOS);
    }
    stream
        .chunks(max_seq_len - 1)
        .map(|chunk| {
            let mut tokens = Vec::with_capacity(chunk.len() + 1);
            tokens.push(BOS);
            tokens.extend_from_slice(chunk);
            TrainSequence { tokens, first_target: 1 }
        })
        .collect()
}

/// An SFT example dropped because its response alone does not fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub index: usize,
    /// Response tokens including EOS.
    pub response_tokens: usize,
    pub max_seq_len: usize,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "example {} rejected: response needs {} tokens plus BOS, max_seq_len is {}",
            self.index, self.response_tokens, self.max_seq_len
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SftEncoding {
    pub sequences: Vec<TrainSequence>,
    pub rejected: Vec<Rejection>,
    /// Examples whose prompt lost tokens on the left.
    pub truncated: usize,
}

/// Encode each example as BOS + prompt + response + EOS with the loss on
/// response and EOS. Over-long prompts lose their oldest tokens.
pub fn encode_sft(examples: &[SftExample], vocab: &Vocab, tokenizer: &dyn Tokenizer, max_seq_len: usize) -> SftEncoding {
    let mut out = SftEncoding::default();
    for (index, ex) in examples.iter().enumerate() {
        let mut response = vocab.encode(&ex.response, tokenizer);
        response.push(EOS);
        if response.len() + 1 > max_seq_len {
            out.rejected.push(Rejection { index, response_tokens: response.len(), max_seq_len });
            continue;
        }
        let prompt = vocab.encode(&ex.prompt, tokenizer);
        let room = max_seq_len - 1 - response.len();
        let keep = &prompt[prompt.len().saturating_sub(room)..];
        if keep.len() < prompt.len() {
            out.truncated += 1;
        }
        let mut tokens = Vec::with_capacity(1 + keep.len() + response.len());
        tokens.push(BOS);
        tokens.extend_from_slice(keep);
        tokens.extend_from_slice(&response);
        out.sequences.push(TrainSequence { tokens, first_target: 1 + keep.len() });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub phase: Phase,
    pub loss: f64,
}

impl fmt::Display for LossRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.step, self.phase, self.loss)
    }
}

/// Loss history as `step<TAB>phase<TAB>loss` lines.
pub fn history_to_string(history: &[LossRecord]) -> String {
    history.iter().map(|r| format!("{r}\n")).collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b)
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, u64::MAX)));
    order
}

fn sequence_grads(model: &Model<f32>, seq: &TrainSequence, wanted: &[bool], dropout_seed: Option<u64>) -> Result<(f64, Grads<f32>)> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let (logits, cache) = model.forward_train(&seq.tokens, rng.as_mut().map(|r| r as &mut dyn rand::RngCore))?;
    let (loss, dlogits) = masked_nll(logits.view(), &seq.tokens, seq.first_target)?;
    Ok((loss, model.backward(&cache, dlogits.view(), wanted)))
}

/// Optimizer steps a full run over `n` sequences takes under `cfg`.
pub fn planned_steps(n: usize, cfg: &TrainConfig) -> u64 {
    let per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total = per_epoch * cfg.epochs as u64;
    cfg.max_steps.map_or(total, |m| m.min(total))
}

/// Train the model's trainable tensors on `data`, continuing from the
/// optimizer's step count. Returns one loss record per step taken.
pub fn train(model: &mut Model<f32>, adam: &mut Adam<f32>, data: &[TrainSequence], cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate(model)?;
    if data.is_empty() {
        return Err(ModelError::Data("no training sequences".into()));
    }
    if let Some(s) = data.iter().find(|s| s.tokens.len() > cfg.max_seq_len || s.first_target == 0 || s.target_count() == 0) {
        return Err(ModelError::Data(format!(
            "training sequence of {} tokens with first target {} does not fit max_seq_len {}",
            s.tokens.len(),
            s.first_target,
            cfg.max_seq_len
        )));
    }
    let per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let total = planned_steps(data.len(), cfg);
    let wanted = model.trainable_mask();
    let dropout = model.config().lora_dropout > 0.0;
    let mut history = Vec::new();
    let mut order: Option<(u64, Vec<usize>)> = None;

    for step in adam.step_count()..total {
        let epoch = step / per_epoch;
        if order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            order = Some((epoch, epoch_order(cfg.seed, epoch, data.len())));
        }
        let idx = &order.as_ref().unwrap().1;
        let b = (step % per_epoch) as usize * cfg.batch_size;
        let batch = &idx[b..(b + cfg.batch_size).min(data.len())];

        let frozen: &Model<f32> = model;
        let results: Vec<Result<(f64, Grads<f32>)>> = batch
            .par_iter()
            .enumerate()
            .map(|(slot, &i)| {
                let seed = dropout.then(|| derive_seed(cfg.seed, step, slot as u64));
                sequence_grads(frozen, &data[i], &wanted, seed)
            })
            .collect();

        let inv = 1.0 / batch.len() as f64;
        let mut grads = Grads::new(wanted.clone());
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l * inv;
            grads.add_scaled(&g, inv as f32);
        }
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { phase: cfg.phase.to_string(), step: step + 1, loss });
        }
        let norm = clip_global_norm(&mut grads, cfg.clip_norm);
        if !norm.is_finite() {
            return Err(ModelError::NonFiniteLoss { phase: cfg.phase.to_string(), step: step + 1, loss: norm });
        }
        adam.update(model, &grads, cfg.learning_rate);
        log::debug!("{} step {}/{total} loss {loss:.6} grad_norm {norm:.4}", cfg.phase, step + 1);
        history.push(LossRecord { step: step + 1, phase: cfg.phase, loss });
    }
    Ok(history)
}

/// Optimizer to continue with: the checkpoint's own state when it was
/// written by the same phase, otherwise a fresh one.
fn optimizer_for(ckpt: &Checkpoint, phase: Phase) -> Adam<f32> {
    match &ckpt.optimizer {
        Some(a) if ckpt.phase == phase => a.clone(),
        _ => Adam::new(&ckpt.model),
    }
}

fn check_tokenizer(ckpt: &Checkpoint, tokenizer: &dyn Tokenizer) -> Result<()> {
    if ckpt.vocab.tokenizer_id() != tokenizer.id() {
        return Err(ModelError::Config(format!(
            "checkpoint vocabulary uses tokenizer {:?}, got {:?}",
            ckpt.vocab.tokenizer_id(),
            tokenizer.id()
        )));
    }
    Ok(())
}

/// Causal LM pretraining of the adapters on every document in `corpus`.
pub fn pretrain(ckpt: Checkpoint, corpus: &CorpusStore, tokenizer: &dyn Tokenizer, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<LossRecord>)> {
    if corpus.is_empty() {
        return Err(ModelError::Core(dapt_core::Error::EmptyCorpus));
    }
    check_tokenizer(&ckpt, tokenizer)?;
    let data = pretrain_sequences(corpus.iter().map(|d| d.text.as_str()), &ckpt.vocab, tokenizer, cfg.max_seq_len);
    run_phase(ckpt, &data, cfg)
}

/// Supervised fine-tuning on prompt/response pairs. Examples whose response
/// cannot fit are skipped and returned.
pub fn finetune(
    ckpt: Checkpoint,
    examples: &[SftExample],
    tokenizer: &dyn Tokenizer,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<LossRecord>, Vec<Rejection>)> {
    if examples.is_empty() {
        return Err(ModelError::Data("no fine-tuning examples".into()));
    }
    check_tokenizer(&ckpt, tokenizer)?;
    let enc = encode_sft(examples, &ckpt.vocab, tokenizer, cfg.max_seq_len);
    if enc.sequences.is_empty() {
        return Err(ModelError::Data(format!("all {} examples rejected: responses exceed max_seq_len", examples.len())));
    }
    let (ckpt, history) = run_phase(ckpt, &enc.sequences, cfg)?;
    Ok((ckpt, history, enc.rejected))
}

fn run_phase(ckpt: Checkpoint, data: &[TrainSequence], cfg: &TrainConfig) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let mut adam = optimizer_for(&ckpt, cfg.phase);
    let Checkpoint { mut model, vocab, .. } = ckpt;
    let history = train(&mut model, &mut adam, data, cfg)?;
    Ok((Checkpoint::new(cfg.phase, model, vocab, Some(adam))?, history))
}

/// Target-weighted mean loss over `data` in evaluation mode.
pub fn mean_loss(model: &Model<f32>, data: &[TrainSequence]) -> Result<f64> {
    if data.is_empty() {
        return Err(ModelError::Data("no evaluation sequences".into()));
    }
    let parts: Vec<Result<(f64, usize)>> = data
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.tokens)?;
            let (l, _) = masked_nll(logits.view(), &s.tokens, s.first_target)?;
            Ok((l * s.target_count() as f64, s.target_count()))
        })
        .collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for p in parts {
        let (l, n) = p?;
        sum += l;
        count += n;
    }
    Ok(sum / count as f64)
}
