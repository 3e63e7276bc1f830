use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::gateway::ProviderKind;
use crate::layout::Distribution;
use crate::prompt::PromptMode;

#[derive(Debug, Parser)]
#[command(
    name = "rework-harness",
    version,
    about = "Benchmark chat models on rework-anomaly detection in event-log variants"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled dataset (normals.csv, anomalies.csv).
    Generate(GenerateArgs),
    /// Arrange a dataset under one or more anomaly distributions.
    Layout(LayoutArgs),
    /// Run the distribution x prompt grid against a provider.
    Run(RunArgs),
    /// Re-score stored predictions without any provider.
    Score(ScoreArgs),
    /// Render report.md and comparison.csv from metrics.csv.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 689)]
    pub n_normal: usize,
    #[arg(long, default_value_t = 71)]
    pub n_anomalous: usize,
    #[arg(long, default_value_t = 26)]
    pub alphabet_size: usize,
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Shortest repeated unit that counts as rework.
    #[arg(long, default_value_t = 1)]
    pub min_unit_len: usize,
}

/// Where variants come from. Without any file flag a synthetic dataset is
/// generated from `--seed`.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// Labeled variant CSV holding both normal and rework variants.
    #[arg(long, conflicts_with_all = ["normals", "anomalies"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "anomalies")]
    pub normals: Option<PathBuf>,
    #[arg(long, requires = "normals")]
    pub anomalies: Option<PathBuf>,
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub synthetic: SyntheticArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Repeatable or comma separated; defaults to all three.
    #[arg(long, value_delimiter = ',')]
    pub distribution: Vec<Distribution>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, default_value = "layouts")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Repeatable or comma separated; defaults to all three.
    #[arg(long, value_delimiter = ',')]
    pub distribution: Vec<Distribution>,
    /// zero, one or few; repeatable or comma separated; defaults to all three.
    #[arg(long, value_delimiter = ',')]
    pub prompt: Vec<PromptMode>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub provider: ProviderKind,
    #[arg(long, default_value = "gpt-4o")]
    pub model: String,
    #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    pub api_key_env: String,
    #[arg(long, default_value_t = 30_000)]
    pub tpm_budget: u64,
    /// Wall-clock limit for each chunk conversation.
    #[arg(long, alias = "timeout", default_value_t = 300.0)]
    pub timeout_secs: f64,
    /// Limit for a single request; clamped to the timeout.
    #[arg(long, default_value_t = 120.0)]
    pub request_timeout_secs: f64,
    #[arg(long, default_value_t = 4)]
    pub max_agent_steps: usize,
    /// mock-noisy only; defaults to 0.02.
    #[arg(long)]
    pub fp_rate: Option<f64>,
    /// mock-noisy only; defaults to 0.15.
    #[arg(long)]
    pub fn_rate: Option<f64>,
    /// mock-delay only: how long each reply takes.
    #[arg(long, default_value_t = 2.0)]
    pub mock_delay_secs: f64,
    /// Draw a fresh layout for every repeat instead of one per distribution.
    #[arg(long)]
    pub relayout_per_run: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Baseline CSV (method,accuracy,fdr); the shipped table when omitted.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Run directories written by `run`; each is re-scored from its own files.
    #[arg(long = "run-dir", conflicts_with_all = ["dataset", "predictions"])]
    pub run_dirs: Vec<PathBuf>,
    /// Arranged labeled dataset CSV.
    #[arg(long, requires = "predictions")]
    pub dataset: Option<PathBuf>,
    /// Raw model answers, one `id# sequence` per line.
    #[arg(long, requires = "dataset")]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub distribution: String,
    #[arg(long, default_value = "-")]
    pub prompt: String,
    #[arg(long, default_value_t = 1)]
    pub run: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}
