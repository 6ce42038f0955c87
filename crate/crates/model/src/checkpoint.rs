//! Binary checkpoint: a model, its vocabulary and optional optimizer state.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "DFCKPT1"  u8 phase  u64 step
//! config: u64 vocab_size d_model n_layers n_heads d_ff max_seq_len lora_rank
//!         f64 lora_alpha lora_dropout  u8 projection mask  u8 train_embeddings
//! vocab:  u32-len tokenizer id, u64 count, count x (u32-len token)
//! u64 tensor count, per tensor: u32-len name, u8 rank, rank x u64 dim, f32 values
//! u64 CRC-64/XZ of everything before it
//! ```
//!
//! Model tensors come first in declaration order, then `adam.m.<name>` and
//! `adam.v.<name>` for each trainable tensor.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use dapt_core::checksum::checksum64;
use ndarray::{ArrayD, IxDyn};

use crate::config::{ModelConfig, ProjectionSet};
use crate::error::{ModelError, Result};
use crate::model::Model;
use crate::optim::Adam;
use crate::vocab::Vocab;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"DFCKPT";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Pretrain,
    Sft,
}

impl Phase {
    fn tag(self) -> u8 {
        match self {
            Phase::Init => 0,
            Phase::Pretrain => 1,
            Phase::Sft => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Phase::Init),
            1 => Ok(Phase::Pretrain),
            2 => Ok(Phase::Sft),
            _ => Err(ModelError::Format(format!("unknown phase tag {tag}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Pretrain => "pretrain",
            Phase::Sft => "sft",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "init" => Ok(Phase::Init),
            "pretrain" => Ok(Phase::Pretrain),
            "sft" => Ok(Phase::Sft),
            _ => Err(ModelError::Config(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub phase: Phase,
    pub model: Model<f32>,
    pub vocab: Vocab,
    /// Present for checkpoints written by a training phase; used to resume.
    pub optimizer: Option<Adam<f32>>,
}

impl Checkpoint {
    pub fn new(phase: Phase, model: Model<f32>, vocab: Vocab, optimizer: Option<Adam<f32>>) -> Result<Self> {
        if vocab.len() != model.config().vocab_size {
            return Err(ModelError::Config(format!(
                "vocabulary has {} entries but the model expects {}",
                vocab.len(),
                model.config().vocab_size
            )));
        }
        Ok(Self { phase, model, vocab, optimizer })
    }

    /// Optimizer steps taken in this checkpoint's phase.
    pub fn step(&self) -> u64 {
        self.optimizer.as_ref().map_or(0, Adam::step_count)
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, value: &ArrayD<f32>) {
    put_str(out, name);
    out.push(value.ndim() as u8);
    for &d in value.shape() {
        put_u64(out, d as u64);
    }
    for v in value.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_config(out: &mut Vec<u8>, c: &ModelConfig) {
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len, c.lora_rank] {
        put_u64(out, v as u64);
    }
    out.extend_from_slice(&c.lora_alpha.to_le_bytes());
    out.extend_from_slice(&c.lora_dropout.to_le_bytes());
    out.push(c.adapted.bits());
    out.push(c.train_embeddings as u8);
}

/// Serialized frozen tensors only, in declaration order. Equal bytes before
/// and after training show the base model was not modified.
pub fn base_tensor_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, p) in model.params().iter().enumerate() {
        if !model.is_trainable(i) {
            put_tensor(&mut out, &p.name, &p.value);
        }
    }
    out
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(b'0' + CHECKPOINT_VERSION);
    out.push(ckpt.phase.tag());
    put_u64(&mut out, ckpt.step());
    put_config(&mut out, ckpt.model.config());
    put_str(&mut out, ckpt.vocab.tokenizer_id());
    put_u64(&mut out, ckpt.vocab.len() as u64);
    for t in ckpt.vocab.tokens() {
        put_str(&mut out, t);
    }
    let params = ckpt.model.params();
    let moments: Vec<_> = ckpt.optimizer.iter().flat_map(|a| a.moments()).collect();
    put_u64(&mut out, (params.len() + 2 * moments.len()) as u64);
    for p in params {
        put_tensor(&mut out, &p.name, &p.value);
    }
    for (id, m, v) in moments {
        put_tensor(&mut out, &format!("adam.m.{}", params[id].name), m);
        put_tensor(&mut out, &format!("adam.v.{}", params[id].name), v);
    }
    let crc = checksum64(&out);
    put_u64(&mut out, crc);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let header = CHECKPOINT_MAGIC.len() + 1;
    if bytes.len() < header {
        if bytes == &CHECKPOINT_MAGIC[..bytes.len().min(CHECKPOINT_MAGIC.len())] {
            return Err(ModelError::Truncated("header incomplete".into()));
        }
        return Err(ModelError::Format("not a checkpoint file".into()));
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(ModelError::Format("bad checkpoint magic".into()));
    }
    let version = bytes[CHECKPOINT_MAGIC.len()].wrapping_sub(b'0');
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    if bytes.len() < header + 8 {
        return Err(ModelError::Truncated("shorter than header and checksum".into()));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = checksum64(payload);
    let mut r = Reader { buf: payload, pos: header };
    // Parse first so a cut-off file reports truncation, not a bad checksum.
    match parse_body(&mut r) {
        Err(e) if stored != computed && !matches!(e, ModelError::Truncated(_)) => Err(ModelError::Checksum { stored, computed }),
        Err(e) => Err(e),
        Ok(_) if stored != computed => Err(ModelError::Checksum { stored, computed }),
        Ok(_) if r.pos != payload.len() => Err(ModelError::Format("trailing bytes after tensors".into())),
        Ok(ckpt) => Ok(ckpt),
    }
}

fn parse_body(r: &mut Reader<'_>) -> Result<Checkpoint> {
    let phase = Phase::from_tag(r.u8()?)?;
    let step = r.u64()?;
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u64()? as usize;
    }
    let [vocab_size, d_model, n_layers, n_heads, d_ff, max_seq_len, lora_rank] = dims;
    let config = ModelConfig {
        vocab_size,
        d_model,
        n_layers,
        n_heads,
        d_ff,
        max_seq_len,
        lora_rank,
        lora_alpha: r.f64()?,
        lora_dropout: r.f64()?,
        adapted: ProjectionSet::from_bits(r.u8()?)?,
        train_embeddings: match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(ModelError::Format(format!("bad train_embeddings flag {b}"))),
        },
    };
    config.validate().map_err(|e| ModelError::Format(e.to_string()))?;

    let tokenizer_id = r.string()?;
    let count = r.u64()?;
    let mut tokens = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        tokens.push(r.string()?);
    }
    let vocab = Vocab::from_tokens(&tokenizer_id, tokens).ok_or_else(|| ModelError::Format("malformed vocabulary".into()))?;

    let n_tensors = r.u64()? as usize;
    let mut model = Model::<f32>::new(config, 0)?;
    let n_params = model.params().len();
    if n_tensors < n_params {
        return Err(ModelError::Format(format!("{n_tensors} tensors, model needs {n_params}")));
    }
    let mut tensors = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        tensors.push(r.tensor()?);
    }
    model.load_tensors(tensors)?;

    let trainable = model.trainable_ids();
    let optimizer = match n_tensors - n_params {
        0 if step == 0 => None,
        n if n == 2 * trainable.len() => {
            let mut m = vec![None; n_params];
            let mut v = vec![None; n_params];
            for &id in &trainable {
                let name = &model.params()[id].name;
                let shape = model.params()[id].value.shape().to_vec();
                for (prefix, slot) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
                    let (got, value) = r.tensor()?;
                    if got != format!("{prefix}{name}") || value.shape() != shape.as_slice() {
                        return Err(ModelError::Format(format!("unexpected optimizer tensor {got:?}")));
                    }
                    slot[id] = Some(value);
                }
            }
            Some(Adam::from_parts(m, v, step))
        }
        n => return Err(ModelError::Format(format!("{n} optimizer tensors for {} trainable tensors", trainable.len()))),
    };
    Checkpoint::new(phase, model, vocab, optimizer).map_err(|e| ModelError::Format(e.to_string()))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_bytes(ckpt)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    checkpoint_from_bytes(&bytes)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Truncated(format!("need {n} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| ModelError::Format("string is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, ArrayD<f32>)> {
        let name = self.string()?;
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let bytes = len
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| ModelError::Format(format!("tensor {name:?} is too large")))?;
        let raw = self.take(bytes)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let value = ArrayD::from_shape_vec(IxDyn(&shape), values).expect("length matches shape");
        Ok((name, value))
    }
}
