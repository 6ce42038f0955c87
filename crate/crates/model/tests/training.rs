use std::collections::BTreeMap;

use dapt_core::sft::SftExample;
use dapt_core::store::{CorpusStore, Document};
use dapt_core::CjkCharTokenizer;
use dapt_model::checkpoint::{base_tensor_bytes, checkpoint_to_bytes, Checkpoint, Phase};
use dapt_model::config::{ModelConfig, ProjectionSet};
use dapt_model::trainer::{finetune, mean_loss, pretrain, train, TrainConfig, TrainSequence};
use dapt_model::optim::Adam;
use dapt_model::{Model, Vocab};

const PATTERN: &str = "甘草味甘性平归心脾肺胃经补脾益气";

fn vocab() -> Vocab {
    let freq: BTreeMap<String, u64> = PATTERN.chars().map(|c| (c.to_string(), 1)).collect();
    Vocab::build("cjk-char-v1", &freq, 64)
}

fn model_config(vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len: 16,
        lora_rank: 4,
        lora_alpha: 16.0,
        lora_dropout: 0.1,
        adapted: ProjectionSet::all(),
        train_embeddings: false,
    }
}

fn fresh() -> Checkpoint {
    let v = vocab();
    let m = Model::<f32>::new(model_config(&v), 11).unwrap();
    Checkpoint::new(Phase::Init, m, v, None).unwrap()
}

/// 32 documents that repeat one pattern, rotated so chunks differ. Each
/// document plus its EOS fills exactly one 16-token sequence.
fn pattern_corpus() -> CorpusStore {
    let chars: Vec<char> = PATTERN.chars().collect();
    let docs = (0..32)
        .map(|i| {
            let text: String = (0..14).map(|k| chars[(i + k) % chars.len()]).collect();
            Document { doc_id: 0, title: String::new(), text, token_count: 14, origin: None }
        })
        .collect();
    CorpusStore::from_documents("cjk-char-v1", docs)
}

fn smoke_config() -> TrainConfig {
    TrainConfig { learning_rate: 1e-2, batch_size: 8, epochs: 50, max_seq_len: 16, seed: 3, ..TrainConfig::pretrain() }
}

#[test]
fn pretraining_smoke_run_lowers_loss() {
    let (out, history) = pretrain(fresh(), &pattern_corpus(), &CjkCharTokenizer, &smoke_config()).unwrap();
    assert_eq!(history.len(), 200);
    let (first, last) = (history[0].loss, history[199].loss);
    eprintln!("pretrain smoke: first {first:.9} last {last:.9}");
    assert!(history.iter().all(|r| r.loss.is_finite()));
    assert!(last < first);
    // recorded baseline of this fixed-seed run
    assert!((first - FIRST_PRETRAIN).abs() < 1e-3, "{first}");
    assert!((last - LAST_PRETRAIN).abs() < 5e-2, "{last}");
    assert_eq!(out.phase, Phase::Pretrain);
    assert_eq!(out.step(), 200);
}

const FIRST_PRETRAIN: f64 = 3.398_812_937;
const LAST_PRETRAIN: f64 = 1.084_004_222;

#[test]
fn finetuning_one_example_lowers_its_loss() {
    let ex = SftExample { prompt: "甘草味甘性平".into(), response: "归心脾肺胃经".into() };
    let cfg = TrainConfig { learning_rate: 1e-2, batch_size: 1, epochs: 100, max_seq_len: 16, seed: 5, ..TrainConfig::sft() };
    let (out, history, rejected) = finetune(fresh(), &[ex], &CjkCharTokenizer, &cfg).unwrap();
    assert!(rejected.is_empty());
    assert_eq!(history.len(), 100);
    let (first, last) = (history[0].loss, history[99].loss);
    eprintln!("sft smoke: first {first:.9} last {last:.9}");
    assert!(last < first);
    assert!((first - FIRST_SFT).abs() < 1e-3, "{first}");
    assert!((last - LAST_SFT).abs() < 5e-2, "{last}");
    assert_eq!(out.phase, Phase::Sft);
}

const FIRST_SFT: f64 = 3.813_037_021;
const LAST_SFT: f64 = 0.480_952_621;

#[test]
fn base_tensors_stay_frozen() {
    let start = fresh();
    let before = base_tensor_bytes(&start.model);
    let cfg = TrainConfig { max_steps: Some(50), ..smoke_config() };
    let (out, history) = pretrain(start.clone(), &pattern_corpus(), &CjkCharTokenizer, &cfg).unwrap();
    assert_eq!(history.len(), 50);
    assert_eq!(base_tensor_bytes(&out.model), before);
    assert_ne!(out.model, start.model);
    assert_eq!(out.model.trainable_param_count(), out.model.config().adapter_param_count());
}

#[test]
fn zero_epochs_is_identity() {
    let start = fresh();
    let cfg = TrainConfig { epochs: 0, ..smoke_config() };
    let (out, history) = pretrain(start.clone(), &pattern_corpus(), &CjkCharTokenizer, &cfg).unwrap();
    assert!(history.is_empty());
    let t = [1, 5, 6, 7];
    assert_eq!(out.model.forward(&t).unwrap(), start.model.forward(&t).unwrap());
    let ex = SftExample { prompt: "甘".into(), response: "草".into() };
    let (out, history, _) = finetune(start.clone(), &[ex], &CjkCharTokenizer, &TrainConfig { epochs: 0, max_seq_len: 16, ..TrainConfig::sft() }).unwrap();
    assert!(history.is_empty());
    assert_eq!(out.model, start.model);
}

#[test]
fn identical_runs_give_identical_checkpoints() {
    let cfg = TrainConfig { max_steps: Some(20), ..smoke_config() };
    let (a, ha) = pretrain(fresh(), &pattern_corpus(), &CjkCharTokenizer, &cfg).unwrap();
    let (b, hb) = pretrain(fresh(), &pattern_corpus(), &CjkCharTokenizer, &cfg).unwrap();
    assert_eq!(checkpoint_to_bytes(&a), checkpoint_to_bytes(&b));
    assert_eq!(ha, hb);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let corpus = pattern_corpus();
    let full_cfg = TrainConfig { max_steps: Some(12), ..smoke_config() };
    let (full, full_hist) = pretrain(fresh(), &corpus, &CjkCharTokenizer, &full_cfg).unwrap();

    let (part, mut hist) = pretrain(fresh(), &corpus, &CjkCharTokenizer, &TrainConfig { max_steps: Some(5), ..smoke_config() }).unwrap();
    let bytes = checkpoint_to_bytes(&part);
    let reloaded = dapt_model::checkpoint::checkpoint_from_bytes(&bytes).unwrap();
    let (resumed, rest) = pretrain(reloaded, &corpus, &CjkCharTokenizer, &full_cfg).unwrap();
    hist.extend(rest);
    assert_eq!(checkpoint_to_bytes(&resumed), checkpoint_to_bytes(&full));
    assert_eq!(hist, full_hist);
}

#[test]
fn prompt_labels_do_not_affect_gradients() {
    let ck = fresh();
    let mut model = ck.model.clone();
    let seq = TrainSequence { tokens: vec![1, 5, 6, 7, 8, 9], first_target: 3 };
    let (logits, cache) = model.forward_train(&seq.tokens, None).unwrap();
    let mut swapped = seq.tokens.clone();
    swapped[1] = 12;
    swapped[2] = 4;
    let wanted = model.trainable_mask();
    let (_, da) = dapt_model::loss::masked_nll(logits.view(), &seq.tokens, 3).unwrap();
    let (_, db) = dapt_model::loss::masked_nll(logits.view(), &swapped, 3).unwrap();
    assert_eq!(model.backward(&cache, da.view(), &wanted), model.backward(&cache, db.view(), &wanted));

    // and training never reads them either
    let mut adam = Adam::new(&model);
    let cfg = TrainConfig { max_steps: Some(1), max_seq_len: 16, ..TrainConfig::sft() };
    train(&mut model, &mut adam, &[seq], &cfg).unwrap();
}

#[test]
fn validation_loss_is_target_weighted() {
    let ck = fresh();
    let a = TrainSequence { tokens: vec![1, 5, 6], first_target: 1 };
    let b = TrainSequence { tokens: vec![1, 7, 8, 9, 10], first_target: 1 };
    let la = mean_loss(&ck.model, std::slice::from_ref(&a)).unwrap();
    let lb = mean_loss(&ck.model, std::slice::from_ref(&b)).unwrap();
    let both = mean_loss(&ck.model, &[a, b]).unwrap();
    assert!((both - (2.0 * la + 4.0 * lb) / 6.0).abs() < 1e-12);
}

#[test]
fn bad_inputs_are_rejected() {
    let empty = CorpusStore::from_documents("cjk-char-v1", vec![]);
    assert!(pretrain(fresh(), &empty, &CjkCharTokenizer, &smoke_config()).is_err());
    assert!(finetune(fresh(), &[], &CjkCharTokenizer, &TrainConfig::sft()).is_err());
    let long = SftExample { prompt: "甘".into(), response: PATTERN.repeat(2) };
    let cfg = TrainConfig { max_seq_len: 16, ..TrainConfig::sft() };
    assert!(finetune(fresh(), &[long], &CjkCharTokenizer, &cfg).is_err());
    let too_long = TrainConfig { max_seq_len: 17, ..smoke_config() };
    assert!(pretrain(fresh(), &pattern_corpus(), &CjkCharTokenizer, &too_long).is_err());
    let zero_lr = TrainConfig { learning_rate: 0.0, ..smoke_config() };
    assert!(pretrain(fresh(), &pattern_corpus(), &CjkCharTokenizer, &zero_lr).is_err());
}
