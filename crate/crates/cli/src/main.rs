//! `tkg`: ingestion checks, training, evaluation and reports for temporal
//! knowledge graph link prediction.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod dataset;
mod error;
mod manifest;
mod plot;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use tkg_core::data::Split;
use tkg_core::eval::EvalMode;
use tkg_core::training::TaskSelector;

use crate::error::{CliError, EXIT_OK, EXIT_USAGE};

#[derive(Parser, Debug)]
#[command(name = "tkg", version = env!("TKG_VERSION"), args_override_self = true)]
#[command(about = "Evolutional representation learning over temporal knowledge graphs")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a dataset and print its statistics.
    Check(CheckArgs),
    /// Train a model and write a checkpoint, a curve CSV and a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write CSV/JSON metric reports.
    Eval(EvalArgs),
    /// Render SVG plots and a markdown summary from run outputs.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory, or its name under the data root (case-insensitive).
    #[arg(long)]
    pub data: Option<String>,
    /// Directory holding the datasets.
    #[arg(long, env = dataset::DATA_ROOT_ENV, default_value = "data")]
    pub data_root: PathBuf,
    /// Entity names file (`id<TAB>name`); defaults to entity2id.txt in the dataset directory.
    #[arg(long)]
    pub names: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Print the statistics as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory; defaults to runs/<dataset>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Repeat the run recorded in this manifest (its config and seed win over flags).
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Embedding dimension.
    #[arg(long, default_value_t = 200)]
    pub dim: usize,
    /// R-GCN layers per snapshot.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// History length m; defaults per dataset (ICEWS18 6, ICEWS14 3, ICEWS05-15 10, WIKI 2, YAGO 1, GDELT 1, else 3).
    #[arg(long)]
    pub history: Option<usize>,
    /// Angle step of the static constraint, in degrees.
    #[arg(long, default_value_t = 10.0)]
    pub gamma: f64,
    /// Weight of the entity loss.
    #[arg(long, default_value_t = 0.7)]
    pub lambda1: f64,
    /// Weight of the relation loss.
    #[arg(long, default_value_t = 0.3)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Maximum epochs; 0 writes the initialized model.
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Which losses to train: entity, relation or both.
    #[arg(long, default_value = "both")]
    pub task: TaskSelector,
    /// Decoder convolution kernels.
    #[arg(long, default_value_t = 50)]
    pub kernels: usize,
    /// Decoder kernel width (the kernel spans 2 rows).
    #[arg(long, default_value_t = 3)]
    pub kernel_width: usize,
    /// Early-stopping patience in epochs; 0 disables.
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    /// Replace the time gate with the plain GCN output.
    #[arg(long)]
    pub no_time_gate: bool,
    /// Require the static-graph constraint (needs a names file). On by default for ICEWS data with names.
    #[arg(long = "static", conflicts_with = "no_static")]
    pub with_static: bool,
    /// Disable the static-graph constraint.
    #[arg(long)]
    pub no_static: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `frozen` scores with the final training state; `gt` evolves through the true history.
    #[arg(long, default_value = "frozen")]
    pub mode: EvalMode,
    /// entity, relation or both.
    #[arg(long, default_value = "both")]
    pub task: TaskSelector,
    /// train, valid or test.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// History length for `gt` mode; defaults to the training value.
    #[arg(long)]
    pub history: Option<usize>,
    /// Remove other known answers before ranking (diagnostics only).
    #[arg(long)]
    pub filtered: bool,
    /// Output directory; defaults to eval-<mode>-<split> next to the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories or files (curve CSV, metrics CSV, report JSON, manifest).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory for SVG plots and summary.md.
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Check(a) => commands::check(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => report::report(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tkg_core::training::TrainConfig;

    #[test]
    fn train_flag_defaults_match_config_defaults() {
        let cli = Cli::try_parse_from(["tkg", "train", "--data", "x"]).unwrap();
        let Command::Train(args) = cli.command else {
            panic!()
        };
        let cfg = commands::train_config(&args, 3);
        assert_eq!(cfg, TrainConfig::default());
    }

    #[test]
    fn later_flags_override_earlier_ones() {
        let cli = Cli::try_parse_from(["tkg", "train", "--dim", "200", "--dim", "8"]).unwrap();
        let Command::Train(args) = cli.command else {
            panic!()
        };
        assert_eq!(args.dim, 8);
    }

    #[test]
    fn static_flags_conflict() {
        assert!(Cli::try_parse_from(["tkg", "train", "--static", "--no-static"]).is_err());
    }

    #[test]
    fn bad_enum_values_are_rejected() {
        assert!(Cli::try_parse_from(["tkg", "eval", "--checkpoint", "c", "--mode", "live"]).is_err());
        assert!(Cli::try_parse_from(["tkg", "eval", "--checkpoint", "c", "--split", "dev"]).is_err());
        assert!(Cli::try_parse_from(["tkg", "train", "--task", "all"]).is_err());
    }
}
