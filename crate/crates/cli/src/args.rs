use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Idiomatic/literal paraphrasing toolkit.
#[derive(Debug, Parser)]
#[command(name = "idiolit", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a masked-instance training corpus from plain sentences (one per line).
    Prep(PrepArgs),
    /// Train the definition-conditioned infilling model on a masked corpus.
    TrainUcd(TrainUcdArgs),
    /// Grow a parallel corpus by iterative back-translation.
    Ibt(IbtArgs),
    /// Idiomatic → literal with a trained checkpoint.
    Paraphrase(ParaphraseArgs),
    /// Literal → idiomatic with a trained ISG checkpoint.
    Idiomatize(IdiomatizeArgs),
    /// Score system outputs and print the results table.
    Evaluate(EvaluateArgs),
    /// Export a parallel corpus as source/target pairs.
    ExportParallel(ExportArgs),
    /// Paraphrase, translate with an external command, and compare BLEU.
    DemoMt(DemoMtArgs),
}

/// Shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML file of hyperparameters and `seed`; explicit flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.stats.json`.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub p_stopword_drop: Option<f64>,
    #[arg(long)]
    pub p_lemmatize: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainUcdArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Masked-instance file scored for exact-match fill accuracy after training.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Fresh,
    Continue,
}

#[derive(Debug, Args)]
pub struct IbtArgs {
    #[command(flatten)]
    pub common: Common,
    /// Seed parallel corpus (parallel schema).
    #[arg(long)]
    pub parallel: PathBuf,
    /// Monolingual idiomatic sentences (idiomatic-only schema).
    #[arg(long)]
    pub mono: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::Fresh)]
    pub mode: Mode,
    /// Registered backend name used for both directions.
    #[arg(long, conflicts_with = "backend_config")]
    pub backend: Option<String>,
    /// Backend TOML used for both directions.
    #[arg(long)]
    pub backend_config: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Checkpoint directory: an infilling model, or a back-translation
    /// checkpoint with `backend.toml`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Backend TOML; takes the place of `--model`.
    #[arg(long, conflicts_with = "model")]
    pub backend_config: Option<PathBuf>,
    #[arg(long)]
    pub beams: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ParaphraseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Idiomatic-only JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IdiomatizeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSONL rows with a `text` (or `literal`) field.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReferenceRows {
    Isp,
    Isg,
    Both,
    None,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// JSONL rows {"source", "candidate", "references"}.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Report JSON; defaults to `<in>.report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Plain-text corpus for a bigram LM; perplexity is n/a without it.
    #[arg(long)]
    pub lm_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lm_smoothing: f64,
    #[arg(long, default_value = "system")]
    pub label: String,
    #[arg(long, value_enum, default_value_t = ReferenceRows::Both)]
    pub reference_rows: ReferenceRows,
    /// Shuffled id/source/candidate TSV for human raters.
    #[arg(long)]
    pub blind_tsv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Jsonl,
    Tsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportDirection {
    Isp,
    Isg,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Jsonl)]
    pub format: ExportFormat,
    #[arg(long, value_enum, default_value_t = ExportDirection::Isp)]
    pub direction: ExportDirection,
    #[arg(long)]
    pub only_augmented: bool,
}

#[derive(Debug, Args)]
pub struct DemoMtArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Idiomatic-only JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Shell command reading sentences on stdin and writing one translation per line.
    #[arg(long)]
    pub translate_cmd: String,
    /// One reference translation per line, aligned with `--in`.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}
