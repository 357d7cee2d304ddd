use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "qadapt", version, about = "Configuration-aware adapters for mixed-precision NF quantization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a teacher network and a regression dataset.
    GenData(GenDataArgs),
    /// Build the initial configuration set from per-layer reconstruction errors.
    InitConfigs(InitConfigsArgs),
    /// Train the configuration-aware model or one of the baselines.
    Train(TrainArgs),
    /// Validation loss over a bit grid for seen and unseen configurations.
    EvalCurve(EvalCurveArgs),
    /// Hypervolume and loss gaps across curves.
    ParetoReport(ParetoReportArgs),
    /// Pick a configuration from a run's final set for a bit budget.
    SelectConfig(SelectConfigArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(clap::Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct InitConfigsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `start:stop:step` in average bits.
    #[arg(long, default_value = "2.25:7.25:0.1")]
    pub budgets: String,
    /// Keep at most this many budgets from the front of the grid.
    #[arg(long, default_value_t = 50)]
    pub max_budgets: usize,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Coa,
    Shared,
    PerConfig,
    PerConfigSvd,
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub configs: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub fd_steps: usize,
    #[arg(long, default_value_t = 40)]
    pub segments: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Optimizer steps per epoch. Baselines train for `epochs · steps`.
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Train on the initial set without configuration search (coa only).
    #[arg(long)]
    pub no_search: bool,
    /// Step each coordinate up the acquisition gradient (`+sign`) instead of
    /// the default `−sign` update (coa only).
    #[arg(long)]
    pub ascend: bool,
    /// Per-config targets: comma-separated average bits, each resolved
    /// against the configuration set.
    #[arg(long, value_delimiter = ',')]
    pub bits: Vec<f64>,
    /// Per-config target: a configuration file holding exactly one entry.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct EvalCurveArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset override; defaults to the one recorded in the run manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "2.1:8.6:0.1")]
    pub bits: String,
    #[arg(long)]
    pub unseen_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct ParetoReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub curves: Vec<PathBuf>,
    /// Display names, one per curve; defaults to file stems.
    #[arg(long, num_args = 1..)]
    pub names: Vec<String>,
    /// Name of the curve gaps are measured against; defaults to the first.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Restrict gaps to these grid bits (every curve must contain them).
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<f64>,
    #[arg(long = "ref", default_value = "1,1")]
    pub reference: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct SelectConfigArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub bits: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Replace the recorded `--out` value.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
