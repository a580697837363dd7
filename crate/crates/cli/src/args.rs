use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simprune::{ActivationKind, Linkage};

#[derive(Debug, Parser)]
#[command(
    name = "simprune",
    version,
    about = "Channel pruning by BN-statistics channel similarity"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster similar channels and write the pruned model and its plan.
    Prune(PruneArgs),
    /// Write per-layer channel distance matrices as CSV.
    Distances(DistancesArgs),
    /// Count inference FLOPs.
    Flops(FlopsArgs),
    /// Run a numerical check; exits 2 if it fails.
    Verify(VerifyArgs),
    /// Empirical, closed-form and difference matrices for every layer.
    Report(ReportArgs),
    /// Write a built-in fixture model.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LinkageArg {
    Complete,
    Single,
    Average,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Average => Linkage::Average,
        }
    }
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Merge clusters while their normalized linkage distance is below this value.
    #[arg(long)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "complete")]
    pub linkage: LinkageArg,
    #[arg(long, default_value_t = 1)]
    pub min_channels: usize,
    /// Drop removed channels without folding their kernels into the representative.
    #[arg(long)]
    pub no_compensate: bool,
    /// Leave the last block unpruned.
    #[arg(long)]
    pub freeze_last: bool,
    /// Manifest path for the pruned model.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
}

#[derive(Debug, Args)]
pub struct DistancesArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Mean distances of actual activations on random inputs instead of the closed form.
    #[arg(long)]
    pub empirical: bool,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Report the reduction relative to this model.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    /// Empirical distance of two Gaussian channels converging to the closed form.
    Prop1,
    /// Activation shift from pruning one channel against its bound.
    Prop2,
    /// (h(x1) - h(x2))^2 <= (x1 - x2)^2 for ReLU and sigmoid.
    Activation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ActivationArg {
    Relu,
    Sigmoid,
}

impl From<ActivationArg> for ActivationKind {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => ActivationKind::ReLU,
            ActivationArg::Sigmoid => ActivationKind::Sigmoid,
        }
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub check: Check,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// prop1: samples per size; prop2: input batches (or random networks
    /// without --model); activation: sampled pairs.
    #[arg(long)]
    pub trials: Option<usize>,
    /// prop2 only; without it a suite of random networks is checked.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// prop2 batch size.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Activations for the random suite or the inequality check; default both.
    #[arg(long, value_enum)]
    pub activation: Option<ActivationArg>,
    /// prop2 with --model: accept identity activations.
    #[arg(long)]
    pub allow_identity: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FixtureKind {
    /// VGG-16 for CIFAR with random weights.
    Vgg16,
    /// Two blocks where two first-layer channels are exact duplicates.
    Duplicate,
    /// Small random network.
    Random,
    /// Four wide blocks used for the empirical-vs-closed-form comparison.
    Fidelity,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(value_enum)]
    pub kind: FixtureKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// vgg16 only.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
}
