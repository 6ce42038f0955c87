//! Desk-scale comparison of keyword-driven corpus selection against an
//! equal-budget random selection, on the synthetic fixture.

use std::time::Instant;

use dapt_core::fixture::{is_in_domain_id, synthetic_fixture, Fixture, FixtureSizes};
use dapt_core::keywords::{extract_task_keywords, fuse, ExtractOptions};
use dapt_core::retrieval::{build_index, expand_query, select_corpus, select_random, Bm25Params};
use dapt_core::store::{ingest, token_frequencies, CorpusStore, IngestOptions};
use dapt_core::{CjkCharTokenizer, Tokenizer};
use dapt_model::checkpoint::{Checkpoint, Phase};
use dapt_model::config::{ModelConfig, ProjectionSet};
use dapt_model::trainer::{mean_loss, pretrain, pretrain_sequences, TrainConfig};
use dapt_model::vocab::DEFAULT_VOCAB_CAP;
use dapt_model::{Model, Vocab};

#[derive(Debug, Clone)]
pub struct DeskConfig {
    pub seed: u64,
    pub sizes: FixtureSizes,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            seed: 20240,
            sizes: FixtureSizes::default(),
            model: ModelConfig {
                vocab_size: 0,
                d_model: 32,
                n_layers: 2,
                n_heads: 4,
                d_ff: 64,
                max_seq_len: 64,
                lora_rank: 8,
                lora_alpha: 32.0,
                lora_dropout: 0.1,
                adapted: ProjectionSet::all(),
                train_embeddings: true,
            },
            train: TrainConfig { learning_rate: 3e-3, batch_size: 16, epochs: 3, max_seq_len: 64, ..TrainConfig::pretrain() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeskReport {
    pub budget: u64,
    pub selected_docs: usize,
    pub selected_tokens: u64,
    pub selected_in_domain_tokens: u64,
    pub random_tokens: u64,
    pub random_in_domain_tokens: u64,
    pub initial_loss: f64,
    pub selected_loss: f64,
    pub random_loss: f64,
    pub seconds: f64,
}

impl DeskReport {
    pub fn in_domain_share(&self) -> f64 {
        self.selected_in_domain_tokens as f64 / self.selected_tokens as f64
    }
}

fn in_domain_tokens(selection: &CorpusStore, in_domain: &[bool]) -> u64 {
    selection.iter().filter(|d| in_domain[d.origin.expect("selected") as usize]).map(|d| d.token_count).sum()
}

pub fn desk_comparison(cfg: &DeskConfig) -> anyhow::Result<DeskReport> {
    let start = Instant::now();
    let tok = CjkCharTokenizer;
    let Fixture { general, samples, lexicon, validation, .. } = synthetic_fixture(cfg.seed, cfg.sizes);
    let store = ingest(&general, &tok, IngestOptions::default())?;
    anyhow::ensure!(store.len() == general.len(), "fixture documents were dropped at ingest");
    let in_domain: Vec<bool> = general.iter().map(|r| is_in_domain_id(&r.source_id)).collect();

    let task = extract_task_keywords(&samples, &tok, &ExtractOptions::default())?;
    let keywords = fuse(&task, &lexicon)?;
    let index = build_index(&store, &tok, Bm25Params::default())?;
    let query = expand_query(&keywords, &tok);
    let budget: u64 = store.iter().filter(|d| in_domain[d.doc_id as usize]).map(|d| d.token_count).sum();
    let selected = select_corpus(&index, &store, &query, budget)?;
    let random = select_random(&store, selected.total_tokens(), cfg.seed);

    let vocab = Vocab::build(tok.id(), &token_frequencies(&store, &tok), DEFAULT_VOCAB_CAP);
    let model_cfg = ModelConfig { vocab_size: vocab.len(), ..cfg.model.clone() };
    let init = Checkpoint::new(Phase::Init, Model::<f32>::new(model_cfg, cfg.seed)?, vocab, None)?;
    let val = pretrain_sequences(validation.iter().map(String::as_str), &init.vocab, &tok, cfg.train.max_seq_len);
    let initial_loss = mean_loss(&init.model, &val)?;

    let train = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let (a, _) = pretrain(init.clone(), &selected, &tok, &train)?;
    let (b, _) = pretrain(init, &random, &tok, &train)?;
    Ok(DeskReport {
        budget,
        selected_docs: selected.len(),
        selected_tokens: selected.total_tokens(),
        selected_in_domain_tokens: in_domain_tokens(&selected, &in_domain),
        random_tokens: random.total_tokens(),
        random_in_domain_tokens: in_domain_tokens(&random, &in_domain),
        initial_loss,
        selected_loss: mean_loss(&a.model, &val)?,
        random_loss: mean_loss(&b.model, &val)?,
        seconds: start.elapsed().as_secs_f64(),
    })
}
