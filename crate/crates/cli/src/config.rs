//! Pipeline configuration file: TOML with one section per stage. Every key
//! is optional and unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dapt_core::keywords::{ExtractOptions, TextRankParams};
use dapt_core::retrieval::Bm25Params;
use dapt_core::store::DEFAULT_MIN_TOKENS;
use dapt_model::config::{ModelConfig, Projection, ProjectionSet};
use dapt_model::generate::DEFAULT_MAX_NEW_TOKENS;
use dapt_model::gradcheck::GradcheckOptions;
use dapt_model::trainer::TrainConfig;
use dapt_model::vocab::DEFAULT_VOCAB_CAP;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub ingest: IngestSection,
    pub keywords: KeywordSection,
    pub retrieval: RetrievalSection,
    pub model: ModelSection,
    pub pretrain: TrainSection,
    pub sft: TrainSection,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
}

/// Fallback locations for files not given on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub selected: Option<PathBuf>,
    pub sft_data: Option<PathBuf>,
    pub exam: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub finetuned: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Paths {
    /// Interpret relative entries as relative to `base`.
    pub fn resolve_relative(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.store,
            &mut self.samples,
            &mut self.lexicon,
            &mut self.keywords,
            &mut self.index,
            &mut self.selected,
            &mut self.sft_data,
            &mut self.exam,
            &mut self.pretrained,
            &mut self.finetuned,
            &mut self.report,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub min_tokens: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { min_tokens: DEFAULT_MIN_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeywordSection {
    pub window: usize,
    pub top_k: usize,
    pub damping: f64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for KeywordSection {
    fn default() -> Self {
        let o = ExtractOptions::default();
        Self {
            window: o.window,
            top_k: o.top_k,
            damping: o.textrank.damping,
            tolerance: o.textrank.tol,
            max_iter: o.textrank.max_iter,
        }
    }
}

impl KeywordSection {
    pub fn options(&self) -> ExtractOptions {
        ExtractOptions {
            window: self.window,
            top_k: self.top_k,
            textrank: TextRankParams { damping: self.damping, tol: self.tolerance, max_iter: self.max_iter },
            ..ExtractOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k1: f64,
    pub b: f64,
    pub budget_tokens: Option<u64>,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let p = Bm25Params::default();
        Self { k1: p.k1, b: p.b, budget_tokens: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub vocab_cap: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub lora_dropout: f64,
    pub adapted: Vec<String>,
    pub train_embeddings: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::default();
        Self {
            vocab_cap: DEFAULT_VOCAB_CAP,
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            max_seq_len: c.max_seq_len,
            lora_rank: c.lora_rank,
            lora_alpha: c.lora_alpha,
            lora_dropout: c.lora_dropout,
            adapted: c.adapted.iter().map(|p| p.name().to_string()).collect(),
            train_embeddings: c.train_embeddings,
        }
    }
}

impl ModelSection {
    pub fn config(&self, vocab_size: usize) -> anyhow::Result<ModelConfig> {
        let adapted = self.adapted.iter().map(|s| s.parse::<Projection>()).collect::<Result<ProjectionSet, _>>()?;
        let c = ModelConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_seq_len: self.max_seq_len,
            lora_rank: self.lora_rank,
            lora_alpha: self.lora_alpha,
            lora_dropout: self.lora_dropout,
            adapted,
            train_embeddings: self.train_embeddings,
        };
        c.validate()?;
        Ok(c)
    }
}

/// Overrides for one training phase; unset keys keep that phase's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub clip_norm: Option<f64>,
    pub max_steps: Option<u64>,
}

impl TrainSection {
    pub fn apply(&self, base: TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            max_seq_len: self.max_seq_len.unwrap_or(base.max_seq_len),
            clip_norm: self.clip_norm.unwrap_or(base.clip_norm),
            max_steps: self.max_steps.or(base.max_steps),
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub max_new_tokens: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { max_new_tokens: DEFAULT_MAX_NEW_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub seed: u64,
    pub step: f64,
    pub threshold: f64,
    pub include_base: bool,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        let o = GradcheckOptions::default();
        Self { seed: o.seed, step: o.step, threshold: o.threshold, include_base: o.include_base }
    }
}

impl GradcheckSection {
    pub fn options(&self) -> GradcheckOptions {
        GradcheckOptions {
            seed: self.seed,
            step: self.step,
            threshold: self.threshold,
            include_base: self.include_base,
            ..GradcheckOptions::default()
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Single-line rendering for the run log.
    pub fn to_log_line(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        let sft = c.sft.apply(TrainConfig::sft(), 1);
        assert_eq!((sft.learning_rate, sft.epochs, sft.seed), (5e-5, 3, 1));
        assert_eq!(c.pretrain.apply(TrainConfig::pretrain(), 0).learning_rate, 1e-4);
        assert_eq!(c.model.config(4100).unwrap(), ModelConfig::default());
    }

    #[test]
    fn sections_override() {
        let c = PipelineConfig::from_toml("seed = 9\n[retrieval]\nk1 = 2.0\n[model]\nadapted = [\"key\"]\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.retrieval.k1, 2.0);
        assert_eq!(c.retrieval.b, 0.75);
        assert!(c.model.config(10).unwrap().adapted.contains(Projection::Key));
    }

    #[test]
    fn partial_phase_sections_keep_phase_defaults() {
        let c = PipelineConfig::from_toml("[sft]\nepochs = 1\n").unwrap();
        let sft = c.sft.apply(TrainConfig::sft(), 0);
        assert_eq!((sft.learning_rate, sft.epochs, sft.batch_size), (5e-5, 1, 128));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[retrieval]\nk3 = 1.0\n").is_err());
        assert!(PipelineConfig::from_toml("[nonsense]\n").is_err());
        assert!(PipelineConfig::from_toml("speed = 1\n").is_err());
    }

    #[test]
    fn bad_projection_name() {
        let c = PipelineConfig::from_toml("[model]\nadapted = [\"gate\"]\n").unwrap();
        assert!(c.model.config(10).is_err());
    }
}
