//! Command layer of the `cbi` tool.
//!
//! Every subcommand is a plain function over parsed options so the pipeline
//! can be driven from tests without spawning the binary.

pub mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use cbi_core::coverage::CoverageError;
use cbi_core::eval::EvalError;
use cbi_core::llm::LlmError;
use cbi_core::pipeline::{PipelineError, Source};
use cbi_core::sbfl::{Formula, Granularity};
use cbi_core::summarize::SummaryError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{failed} of {total} bug(s) failed")]
    BugFailures { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cbi", version, about = "Isolate the compiler source files responsible for a failing test program")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert gcov reports into a portable coverage manifest.
    Ingest(IngestArgs),
    /// Rank candidate files with one SBFL formula.
    Rank(RankArgs),
    /// Generate (or refresh) per-file documentation summaries.
    Summarize(SummarizeArgs),
    /// Run the full isolation pipeline on every bug of a manifest.
    Isolate(IsolateArgs),
    /// Compute Top-N, MFR and MAR for a directory of rankings.
    Evaluate(EvaluateArgs),
    /// Run the full pipeline and every single-source ablation.
    Ablate(IsolateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory laid out as `{failing,passing}/<execution-id>/**/*.gcov`.
    #[arg(long, conflicts_with = "gcov")]
    pub gcov_dir: Option<PathBuf>,
    /// A single gcov report; prints its execution count.
    #[arg(long)]
    pub gcov: Option<PathBuf>,
    /// Where to write the coverage manifest (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ochiai")]
    pub formula: Formula,
    #[arg(long, default_value = "test")]
    pub granularity: Granularity,
}

/// Options shared by every command that may talk to a model.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// JSON pipeline configuration; flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Answer from a `{ "<prompt sha256>": "<response>" }` script instead of the network.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Append every model exchange to this JSON-lines file.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Summary cache file.
    #[arg(long)]
    pub summaries: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, required_unless_present = "doc_links")]
    pub manifest: Option<PathBuf>,
    /// A doc-link map to summarize instead of the manifest's.
    #[arg(long)]
    pub doc_links: Option<PathBuf>,
    /// Regenerate summaries that are already cached.
    #[arg(long)]
    pub refresh: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct IsolateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop one information source (summary, compile, execov, testcov, llm, failtest).
    #[arg(long = "disable", value_name = "SRC")]
    pub disable: Vec<Source>,
    #[arg(long)]
    pub testcov_formula: Option<Formula>,
    #[arg(long)]
    pub execov_formula: Option<Formula>,
    /// Also write each prompt to `<DIR>/<bug_id>.txt`.
    #[arg(long, value_name = "DIR")]
    pub dump_prompt: Option<PathBuf>,
    /// Query the model this many times per bug and keep the best-parsed answer.
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub list_cap: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory holding `<bug_id>/ranking.json` for every bug.
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add one row per compiler.
    #[arg(long)]
    pub by_compiler: bool,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => commands::ingest(&args),
        Command::Rank(args) => commands::rank(&args),
        Command::Summarize(args) => commands::summarize(&args),
        Command::Isolate(args) => commands::isolate(&args).map(|_| ()),
        Command::Evaluate(args) => commands::evaluate(&args).map(|_| ()),
        Command::Ablate(args) => commands::ablate(&args).map(|_| ()),
    }
}
