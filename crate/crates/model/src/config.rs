use std::fmt;
use std::str::FromStr;

use crate::error::{ModelError, Result};

/// Linear projections inside a decoder block that can carry an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
    FfIn,
    FfOut,
}

impl Projection {
    pub const ALL: [Projection; 6] =
        [Projection::Query, Projection::Key, Projection::Value, Projection::Output, Projection::FfIn, Projection::FfOut];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Query => "query",
            Projection::Key => "key",
            Projection::Value => "value",
            Projection::Output => "output",
            Projection::FfIn => "ff_in",
            Projection::FfOut => "ff_out",
        }
    }

    fn bit(self) -> u8 {
        1 << Projection::ALL.iter().position(|&p| p == self).unwrap()
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Projection {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Projection::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown projection {s:?}")))
    }
}

/// Subset of [`Projection`]s, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProjectionSet(u8);

impl ProjectionSet {
    pub fn empty() -> Self {
        Self(0)
    }

    pub fn all() -> Self {
        Projection::ALL.into_iter().collect()
    }

    pub fn contains(self, p: Projection) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn insert(&mut self, p: Projection) {
        self.0 |= p.bit();
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits >> Projection::ALL.len() != 0 {
            return Err(ModelError::Format(format!("bad projection mask {bits:#x}")));
        }
        Ok(Self(bits))
    }

    pub fn iter(self) -> impl Iterator<Item = Projection> {
        Projection::ALL.into_iter().filter(move |&p| self.contains(p))
    }
}

impl FromIterator<Projection> for ProjectionSet {
    fn from_iter<I: IntoIterator<Item = Projection>>(iter: I) -> Self {
        let mut s = Self::empty();
        for p in iter {
            s.insert(p);
        }
        s
    }
}

pub const DEFAULT_LORA_RANK: usize = 8;
pub const DEFAULT_LORA_ALPHA: f64 = 32.0;
pub const DEFAULT_LORA_DROPOUT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub adapted: ProjectionSet,
    /// Also train token and position embeddings.
    pub train_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 4096 + 4,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_seq_len: 256,
            lora_rank: DEFAULT_LORA_RANK,
            lora_alpha: DEFAULT_LORA_ALPHA,
            lora_dropout: DEFAULT_LORA_DROPOUT,
            adapted: [Projection::Query, Projection::Value].into_iter().collect(),
            train_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// `(d1, d2)` = (output, input) size of a projection.
    pub fn projection_dims(&self, p: Projection) -> (usize, usize) {
        match p {
            Projection::FfIn => (self.d_ff, self.d_model),
            Projection::FfOut => (self.d_model, self.d_ff),
            _ => (self.d_model, self.d_model),
        }
    }

    /// Number of adapter parameters: `sum r * (d1 + d2)` over adapted layers.
    pub fn adapter_param_count(&self) -> usize {
        self.n_layers
            * self
                .adapted
                .iter()
                .map(|p| {
                    let (d1, d2) = self.projection_dims(p);
                    self.lora_rank * (d1 + d2)
                })
                .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("vocab_size, d_model, n_heads and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_seq_len < 2 {
            return bad(format!("max_seq_len must be >= 2, got {}", self.max_seq_len));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return bad(format!("lora_dropout must lie in [0, 1), got {}", self.lora_dropout));
        }
        if !(self.lora_alpha > 0.0) {
            return bad(format!("lora_alpha must be positive, got {}", self.lora_alpha));
        }
        for p in self.adapted.iter() {
            let (d1, d2) = self.projection_dims(p);
            if self.lora_rank == 0 || self.lora_rank > d1.min(d2) {
                return Err(ModelError::RankOutOfRange { rank: self.lora_rank, d1, d2 });
            }
        }
        Ok(())
    }
}
