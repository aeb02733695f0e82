use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "condsel",
    version,
    about = "Conditional variable selection with a learned feature mask"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (data.csv + manifest.json)
    Gen(GenArgs),
    /// Train the masked model and rank the candidate variables
    Select(SelectArgs),
    /// Retrain plain models on growing top-K subsets
    Sweep(SweepArgs),
    /// Score every k-subset of the candidates
    Exhaustive(ExhaustiveArgs),
    /// Compare analytic and finite-difference gradients on a random model
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Tuning,
    OpenDefect,
    Planted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for condsel::Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => condsel::Task::Regression,
            TaskArg::Classification => condsel::Task::BinaryClassification,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    /// Number of rows (open-defect: split evenly between the classes)
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Planted only: candidate count
    #[arg(long, default_value_t = 6)]
    pub d_c: usize,
    /// Planted only: preselected count
    #[arg(long, default_value_t = 1)]
    pub d_p: usize,
    /// Planted only: relevant candidate indices
    #[arg(long, value_delimiter = ',', default_value = "0,3")]
    pub relevant: Vec<usize>,
    /// Planted only
    #[arg(long, value_enum, default_value = "regression")]
    pub task: TaskArg,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory holding data.csv and manifest.json, or a CSV file
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest path when --data is a file (default: manifest.json beside it)
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory (default: <data dir>/<subcommand>)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainArgs {
    /// JSON settings file; flags take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Number of candidates to keep (default: all, ranked)
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Total subset sizes, preselected variables included (default: D_p..=D_p+D_c)
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    /// Reuse the importance from a select report instead of training
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Also run the exhaustive search for every K and report the gaps
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = condsel::oracle::DEFAULT_BUDGET_CAP)]
    pub budget: u128,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ExhaustiveArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Candidates per combination
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = condsel::oracle::DEFAULT_BUDGET_CAP)]
    pub budget: u128,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub d_p: usize,
    #[arg(long, default_value_t = 10)]
    pub d_c: usize,
    /// Check one task only (default: both)
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds starting at --seed
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Exit with status 2 when the error exceeds this value
    #[arg(long)]
    pub tolerance: Option<f64>,
}
