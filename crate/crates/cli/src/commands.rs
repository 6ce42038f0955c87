use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dapt_core::eval::{evaluate, format_prompt, read_exam, McqItem};
use dapt_core::fixture::{synthetic_fixture, FixtureSizes};
use dapt_core::keywords::{extract_task_keywords, fuse, read_keywords, read_lexicon, write_keywords};
use dapt_core::retrieval::{build_index, expand_query, load_index, save_index, select_corpus, Bm25Params, INDEX_MAGIC, INDEX_VERSION};
use dapt_core::sft::{read_sft, sft_to_string};
use dapt_core::store::{ingest, load_store, read_raw_records, save_store, token_frequencies, IngestOptions, STORE_MAGIC, STORE_VERSION};
use dapt_core::{CjkCharTokenizer, Tokenizer};
use dapt_model::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Phase, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use dapt_model::generate::GreedyResponder;
use dapt_model::gradcheck::gradient_check;
use dapt_model::trainer::{finetune, history_to_string, pretrain, TrainConfig};
use dapt_model::{Model, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "dapt", about = "Keyword-driven domain corpus selection and adapter training", disable_version_flag = true)]
pub struct Cli {
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print program and artifact format versions.
    #[arg(long)]
    pub version: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic fixture and a matching config into a directory.
    Fixture {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Clean and tokenize JSON-lines records into a corpus store.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        min_tokens: Option<usize>,
    },
    /// Extract weighted domain keywords from task samples and a lexicon.
    Keywords {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a BM25 index over a corpus store.
    Index {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        k1: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
    },
    /// Select the domain corpus under a token budget.
    Retrieve {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long)]
        budget_tokens: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Causal LM pretraining of the adapters on a corpus store.
    Pretrain {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long = "in")]
        init: Option<PathBuf>,
        /// Store used to build the vocabulary of a fresh model (default: the corpus).
        #[arg(long)]
        vocab_store: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the loss history here.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Supervised fine-tuning on prompt/response pairs.
    Sft {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long = "in")]
        init: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score a multiple-choice exam.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Scripted responses (JSON lines with a `response` field), one per
        /// exam item, used instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        responses: Option<PathBuf>,
        #[arg(long)]
        exam: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        max_new_tokens: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

impl TrainFlags {
    fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.max_seq_len {
            c.max_seq_len = v;
        }
        if let Some(v) = self.max_steps {
            c.max_steps = Some(v);
        }
        c
    }
}

pub fn version_text() -> String {
    format!(
        "dapt {}\ncorpus-store {} {}\nindex {} {}\ncheckpoint {} {}\nkeywords tsv 1\nloss-history tsv 1\nexam jsonl 1\nsft jsonl 1\n",
        env!("CARGO_PKG_VERSION"),
        STORE_MAGIC,
        STORE_VERSION,
        String::from_utf8_lossy(INDEX_MAGIC),
        INDEX_VERSION as char,
        String::from_utf8_lossy(CHECKPOINT_MAGIC),
        CHECKPOINT_VERSION,
    )
}

/// A file from a flag or the config's `[paths]`, whichever is set.
fn pick(flag: &Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    flag.clone().or_else(|| fallback.clone()).with_context(|| format!("missing --{what} (or paths entry in the config)"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptedResponse {
    response: String,
}

fn read_responses(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: ScriptedResponse = serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            Ok(r.response)
        })
        .collect()
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|r| serde_json::to_string(r).expect("serializable") + "\n").collect()
}

/// Load the config named by `--config` (relative paths inside it resolve
/// against its directory) and apply the global flags.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let mut c = PipelineConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new(""));
            c.paths.resolve_relative(base);
            c
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.version {
        print!("{}", version_text());
        return Ok(());
    }
    let cfg = resolve_config(&cli)?;
    let Some(command) = cli.command else { bail!("no subcommand given (see --help)") };
    log::info!("resolved config: {}", cfg.to_log_line());
    let tok = CjkCharTokenizer;
    let paths = &cfg.paths;

    match command {
        Command::Fixture { out_dir } => write_fixture(&out_dir, cfg.seed)?,
        Command::Ingest { input, store, min_tokens } => {
            let input = pick(&input, &paths.corpus, "input")?;
            let out = pick(&store, &paths.store, "store")?;
            let records = read_raw_records(&input)?;
            let opts = IngestOptions { min_tokens: min_tokens.unwrap_or(cfg.ingest.min_tokens) };
            let store = ingest(&records, &tok, opts)?;
            log::info!("ingested {} of {} records, {} tokens", store.len(), records.len(), store.total_tokens());
            save_store(&store, &out)?;
        }
        Command::Keywords { samples, lexicon, top_k, window, out } => {
            let mut section = cfg.keywords.clone();
            section.top_k = top_k.unwrap_or(section.top_k);
            section.window = window.unwrap_or(section.window);
            let samples = read_lines(&pick(&samples, &paths.samples, "samples")?)?;
            let lexicon = match lexicon.or_else(|| paths.lexicon.clone()) {
                Some(p) => read_lexicon(&p)?,
                None => Vec::new(),
            };
            let task = extract_task_keywords(&samples, &tok, &section.options())?;
            let set = fuse(&task, &lexicon)?;
            log::info!("{} keywords from {} samples and {} lexicon entries", set.len(), samples.len(), lexicon.len());
            write_keywords(&set, &pick(&out, &paths.keywords, "out")?)?;
        }
        Command::Index { store, out, k1, b } => {
            let store = load_store(&pick(&store, &paths.store, "store")?)?;
            let params = Bm25Params { k1: k1.unwrap_or(cfg.retrieval.k1), b: b.unwrap_or(cfg.retrieval.b) };
            let index = build_index(&store, &tok, params)?;
            log::info!("indexed {} documents, {} terms", index.doc_count(), index.terms().count());
            save_index(&index, &pick(&out, &paths.index, "out")?)?;
        }
        Command::Retrieve { index, store, keywords, budget_tokens, out } => {
            let index = load_index(&pick(&index, &paths.index, "index")?)?;
            let store = load_store(&pick(&store, &paths.store, "store")?)?;
            let keywords = read_keywords(&pick(&keywords, &paths.keywords, "keywords")?)?;
            let budget = budget_tokens.or(cfg.retrieval.budget_tokens).context("missing --budget-tokens")?;
            let query = expand_query(&keywords, &tok);
            let selected = select_corpus(&index, &store, &query, budget)?;
            log::info!("selected {} documents, {} of {budget} budget tokens", selected.len(), selected.total_tokens());
            save_store(&selected, &pick(&out, &paths.selected, "out")?)?;
        }
        Command::Pretrain { corpus, init, vocab_store, out, history, train } => {
            let corpus_path = pick(&corpus, &paths.selected, "corpus")?;
            let corpus = load_store(&corpus_path)?;
            let start = match init {
                Some(p) => load_checkpoint(&p)?,
                None => {
                    let vocab_src = match vocab_store {
                        Some(p) => load_store(&p)?,
                        None => corpus.clone(),
                    };
                    let vocab = Vocab::build(tok.id(), &token_frequencies(&vocab_src, &tok), cfg.model.vocab_cap);
                    let model = Model::<f32>::new(cfg.model.config(vocab.len())?, cfg.seed)?;
                    Checkpoint::new(Phase::Init, model, vocab, None)?
                }
            };
            let tc = train.apply(cfg.pretrain.apply(TrainConfig::pretrain(), cfg.seed));
            log::info!("pretraining on {} documents: {tc:?}", corpus.len());
            let (ckpt, hist) = pretrain(start, &corpus, &tok, &tc)?;
            finish_training(&ckpt, &hist, &pick(&out, &paths.pretrained, "out")?, history.as_deref())?;
        }
        Command::Sft { data, init, out, history, train } => {
            let examples = read_sft(&pick(&data, &paths.sft_data, "data")?)?;
            let start = load_checkpoint(&pick(&init, &paths.pretrained, "in")?)?;
            let tc = train.apply(cfg.sft.apply(TrainConfig::sft(), cfg.seed));
            log::info!("fine-tuning on {} examples: {tc:?}", examples.len());
            let (ckpt, hist, rejected) = finetune(start, &examples, &tok, &tc)?;
            for r in &rejected {
                log::warn!("{r}");
            }
            finish_training(&ckpt, &hist, &pick(&out, &paths.finetuned, "out")?, history.as_deref())?;
        }
        Command::Eval { checkpoint, responses, exam, report, max_new_tokens } => {
            let items = read_exam(&pick(&exam, &paths.exam, "exam")?)?;
            let result = match responses {
                Some(path) => {
                    let scripted = read_responses(&path)?;
                    if scripted.len() != items.len() {
                        bail!("{} scripted responses for {} exam items", scripted.len(), items.len());
                    }
                    let prompts: Vec<String> = items.iter().map(format_prompt).collect();
                    let responder = |prompt: &str| {
                        let i = prompts.iter().position(|p| p == prompt).expect("prompt from this exam");
                        scripted[i].clone()
                    };
                    evaluate(&responder, &items)?
                }
                None => {
                    let ckpt = load_checkpoint(&pick(&checkpoint, &paths.finetuned, "checkpoint")?)?;
                    let mut responder = GreedyResponder::new(&ckpt.model, &ckpt.vocab, &tok);
                    responder.max_new_tokens = max_new_tokens.unwrap_or(cfg.eval.max_new_tokens);
                    evaluate(&responder, &items)?
                }
            };
            if let Some(path) = report.or_else(|| paths.report.clone()) {
                write(&path, result.render())?;
            }
            println!("{}", result.summary_line());
        }
        Command::Gradcheck { report } => {
            let result = gradient_check(&cfg.gradcheck.options())?;
            let text = result.render();
            if let Some(path) = report {
                write(&path, &text)?;
            }
            print!("{text}");
            if !result.passed() {
                bail!("gradient check failed: max relative error {:.3e} >= {:.0e}", result.max_error(), result.threshold);
            }
        }
    }
    Ok(())
}

fn finish_training(ckpt: &Checkpoint, hist: &[dapt_model::trainer::LossRecord], out: &Path, history: Option<&Path>) -> anyhow::Result<()> {
    if let (Some(first), Some(last)) = (hist.first(), hist.last()) {
        log::info!("{} steps, loss {:.4} -> {:.4}", hist.len(), first.loss, last.loss);
    }
    save_checkpoint(ckpt, out)?;
    if let Some(path) = history {
        write(path, history_to_string(hist))?;
    }
    Ok(())
}

/// File names written by `fixture`.
pub mod fixture_files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const SAMPLES: &str = "samples.txt";
    pub const LEXICON: &str = "lexicon.txt";
    pub const VALIDATION: &str = "validation.txt";
    pub const SFT: &str = "sft.jsonl";
    pub const EXAM: &str = "exam.jsonl";
    pub const GOLD_RESPONSES: &str = "gold_responses.jsonl";
    pub const CONFIG: &str = "pipeline.toml";
}

/// Desk-scale config pointing at the fixture files next to it.
const FIXTURE_CONFIG: &str = r#"# Desk-scale run over the synthetic fixture in this directory.
[paths]
corpus = "corpus.jsonl"
store = "general.store"
samples = "samples.txt"
lexicon = "lexicon.txt"
keywords = "keywords.tsv"
index = "general.idx"
selected = "selected.store"
sft_data = "sft.jsonl"
exam = "exam.jsonl"
pretrained = "pretrained.ckpt"
finetuned = "finetuned.ckpt"
report = "report.tsv"

[model]
d_model = 32
n_layers = 2
n_heads = 4
d_ff = 64
max_seq_len = 128
adapted = ["query", "key", "value", "output", "ff_in", "ff_out"]
train_embeddings = true

[pretrain]
learning_rate = 3e-3
batch_size = 16
epochs = 2
max_seq_len = 64

[sft]
learning_rate = 3e-3
batch_size = 8
epochs = 2
max_seq_len = 128

[eval]
max_new_tokens = 24
"#;

fn write_fixture(dir: &Path, seed: u64) -> anyhow::Result<()> {
    use fixture_files::*;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let fx = synthetic_fixture(seed, FixtureSizes::default());
    write(&dir.join(CORPUS), jsonl(&fx.general))?;
    write(&dir.join(SAMPLES), fx.samples.join("\n") + "\n")?;
    write(&dir.join(LEXICON), fx.lexicon.join("\n") + "\n")?;
    write(&dir.join(VALIDATION), fx.validation.join("\n") + "\n")?;
    write(&dir.join(SFT), sft_to_string(&fx.sft))?;
    write(&dir.join(EXAM), dapt_core::eval::exam_to_string(&fx.exam))?;
    let gold: Vec<ScriptedResponse> = fx.exam.iter().map(gold_response).collect();
    write(&dir.join(GOLD_RESPONSES), jsonl(&gold))?;
    write(&dir.join(CONFIG), FIXTURE_CONFIG)?;
    log::info!("fixture with {} documents written to {}", fx.general.len(), dir.display());
    Ok(())
}

fn gold_response(item: &McqItem) -> ScriptedResponse {
    ScriptedResponse { response: format!("正确选项是{}", item.gold()) }
}
