//! `xdoc`: build cross-document QA pre-training data and evaluate outputs.

mod commands;
mod config;
mod eval;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xdoc_core::assembler::{Mode, QuestionPlacement};
use xdoc_core::corpus::CorpusFormat;
use xdoc_core::emitter::FinetuneTask;
use xdoc_core::metrics::RougeVariant;

#[derive(Debug, Parser)]
#[command(name = "xdoc", version, about = "Cross-document question-answering pre-training data tools")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus for malformed records and cluster violations.
    Validate(ValidateArgs),
    /// Dump per-sentence salience scores for every cluster.
    Score(ScoreArgs),
    /// Generate pre-training instances from a corpus.
    Generate(GenerateArgs),
    /// Summarize an instance file.
    Stats(StatsArgs),
    /// Split an instance file into train and held-out sets by cluster.
    Split(SplitArgs),
    /// Convert task records into model input/target pairs.
    EmitFinetune(FinetuneArgs),
    /// Evaluate predictions.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus file (json-lines) or directory (directory-per-cluster).
    #[arg(long)]
    pub input: PathBuf,
    /// Input layout: json-lines or directory-per-cluster.
    #[arg(long)]
    pub format: Option<CorpusFormat>,
    /// Stop at the first malformed record (exit status 1).
    #[arg(long)]
    pub strict: bool,
    /// Abbreviation list replacing the built-in one.
    #[arg(long)]
    pub abbreviations: Option<PathBuf>,
    /// Collapse whitespace runs in document text before segmentation.
    #[arg(long)]
    pub normalize_whitespace: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Fewest documents a cluster should have (default 2).
    #[arg(long)]
    pub min_docs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Salience score: r1-f1 (default), r2-f1, rl-f1 or mean-f1.
    #[arg(long)]
    pub rouge_variant: Option<RougeVariant>,
    /// Stem tokens before scoring.
    #[arg(long)]
    pub stem: bool,
    /// Ignore salience scores supplied with the corpus.
    #[arg(long)]
    pub recompute: bool,
}

#[derive(Debug, Args)]
pub struct GenerationArgs {
    /// Salience score: r1-f1 (default), r2-f1, rl-f1 or mean-f1.
    #[arg(long)]
    pub rouge_variant: Option<RougeVariant>,
    /// Stem tokens before salience scoring.
    #[arg(long)]
    pub stem_scoring: bool,
    /// Ignore salience scores supplied with the corpus.
    #[arg(long)]
    pub recompute_scores: bool,
    /// Comma-separated subset of A,B,C.
    #[arg(long, value_delimiter = ',')]
    pub modes: Option<Vec<Mode>>,
    /// Token replacing masked text (default "<mask>").
    #[arg(long)]
    pub mask_token: Option<String>,
    /// Token between documents (default "<doc-sep>").
    #[arg(long)]
    pub doc_sep_token: Option<String>,
    /// Text between answer and sentence in the target (default ", ").
    #[arg(long)]
    pub target_separator: Option<String>,
    /// Input budget in whitespace tokens (default 4096).
    #[arg(long)]
    pub max_input_tokens: Option<usize>,
    /// Target budget in whitespace tokens (default 1024).
    #[arg(long)]
    pub max_output_tokens: Option<usize>,
    /// Where the question goes relative to the documents.
    #[arg(long, value_enum)]
    pub question_placement: Option<Placement>,
    /// Mark question and context with "question: " and "context: ".
    #[arg(long)]
    pub prefixes: bool,
    /// Leave the question out of the input.
    #[arg(long)]
    pub no_question: bool,
    /// Use only the answer as the target.
    #[arg(long)]
    pub answer_only: bool,
    /// Fewest documents a cluster should have (default 2).
    #[arg(long)]
    pub min_docs: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Placement {
    AfterContext,
    BeforeContext,
}

impl From<Placement> for QuestionPlacement {
    fn from(p: Placement) -> Self {
        match p {
            Placement::AfterContext => QuestionPlacement::AfterContext,
            Placement::BeforeContext => QuestionPlacement::BeforeContext,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Instance file to write; run metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub generation: GenerationArgs,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Question generation service; the built-in cloze generator is used otherwise.
    #[arg(long, env = "XDOC_QG_ENDPOINT")]
    pub qg_endpoint: Option<String>,
    /// Fall back to cloze generation when the service fails on a sentence.
    #[arg(long)]
    pub qg_fallback: bool,
    /// Verb list replacing the built-in one.
    #[arg(long)]
    pub verbs: Option<PathBuf>,
    /// Answerability filter service; filtering is off when unset.
    #[arg(long)]
    pub filter_endpoint: Option<String>,
    /// Drop pairs when the filter service fails (default keeps them).
    #[arg(long)]
    pub filter_fail_closed: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Instance file.
    #[arg(long)]
    pub input: PathBuf,
    /// Run metadata; defaults to `<input>.meta.json` when present.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Instance file.
    #[arg(long)]
    pub input: PathBuf,
    /// Output for training clusters.
    #[arg(long)]
    pub train: PathBuf,
    /// Output for held-out clusters.
    #[arg(long)]
    pub heldout: PathBuf,
    /// Share of clusters assigned to the held-out set, in [0, 1).
    #[arg(long, default_value_t = 0.005)]
    pub fraction: f64,
    /// Hash seed; changing it draws a different held-out set.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Record format: qa, mds or qmds.
    #[arg(long)]
    pub task: FinetuneTask,
    /// JSON-lines task records.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; run metadata goes to `<out>.meta.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Stop at the first malformed record (exit status 1).
    #[arg(long)]
    pub strict: bool,
    #[command(flatten)]
    pub generation: GenerationArgs,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Mean ROUGE-1/2/L of predictions against references.
    Rouge(EvalRougeArgs),
    /// Exact match and token F1 of predicted answers.
    Qa(EvalQaArgs),
}

#[derive(Debug, Args)]
pub struct EvalRougeArgs {
    /// JSON-lines predictions: strings or objects with `--field`.
    #[arg(long)]
    pub pred: PathBuf,
    /// JSON-lines references, parallel to the predictions.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Object field holding the text.
    #[arg(long, default_value = "text")]
    pub field: String,
    /// Compare tokens without stemming.
    #[arg(long)]
    pub no_stem: bool,
}

#[derive(Debug, Args)]
pub struct EvalQaArgs {
    /// Predicted answers; a list counts as its first item.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold answers; the field may hold a string or a list of strings.
    #[arg(long)]
    pub gold: PathBuf,
    /// Object field holding the answer.
    #[arg(long, default_value = "answer")]
    pub field: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match commands::run(cli) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
