use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use retrieval_uq::{SimilarityKind, DEFAULT_TEMPERATURES};

mod commands;
mod error;

use error::CliError;

/// Uncertainty quantification for cross-modal retrieval from Monte-Carlo embedding stacks.
#[derive(Parser, Debug)]
#[command(name = "ruq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Retrieval metrics for weight, feature and posterior averaging.
    Eval(EvalArgs),
    /// Per-query feature and posterior uncertainty.
    Uncertainty(UncertaintyArgs),
    /// Uncertainty-ranked rejection precision-recall curves.
    Prcurve(PrcurveArgs),
    /// Histograms of in-distribution versus shifted uncertainties.
    Shift(ShiftArgs),
    /// Generate synthetic data, train the toy encoders and dump embeddings.
    Toy(ToyArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Similarity function: cosine, dot or negl2.
    #[arg(long)]
    pub similarity: Option<SimilarityKind>,

    /// Softmax temperature (repeatable).
    #[arg(long = "temp", default_values_t = DEFAULT_TEMPERATURES)]
    pub temps: Vec<f64>,

    /// Number of drawn models to use (repeatable). Defaults to every model in the stacks.
    #[arg(long = "models")]
    pub models: Vec<usize>,

    /// Recall cutoff (repeatable).
    #[arg(long = "k", default_values_t = [1usize, 5, 10])]
    pub ks: Vec<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StackArgs {
    /// Query embedding stack (UQET).
    #[arg(long)]
    pub queries: PathBuf,

    /// Target embedding stack (UQET).
    #[arg(long)]
    pub targets: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetArgs {
    /// Deterministic (L=1) query embeddings for weight averaging.
    #[arg(long, requires = "det_targets")]
    pub det_queries: Option<PathBuf>,

    /// Deterministic (L=1) target embeddings for weight averaging.
    #[arg(long, requires = "det_queries")]
    pub det_targets: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub stacks: StackArgs,

    /// Positives of the query-to-target direction (JSON).
    #[arg(long)]
    pub positives: PathBuf,

    /// Positives of the target-to-query direction; also evaluates that direction.
    #[arg(long)]
    pub reverse_positives: Option<PathBuf>,

    #[command(flatten)]
    pub det: DetArgs,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct UncertaintyArgs {
    #[command(flatten)]
    pub stacks: StackArgs,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct PrcurveArgs {
    #[command(flatten)]
    pub stacks: StackArgs,

    #[arg(long)]
    pub positives: PathBuf,

    /// Success flags come from these deterministic stacks when given,
    /// otherwise from the feature-averaged ranking.
    #[command(flatten)]
    pub det: DetArgs,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ShiftArgs {
    #[arg(long)]
    pub in_queries: PathBuf,

    #[arg(long)]
    pub in_targets: PathBuf,

    #[arg(long)]
    pub out_queries: PathBuf,

    /// Targets for the shifted queries. Defaults to the in-distribution targets.
    #[arg(long)]
    pub out_targets: Option<PathBuf>,

    #[arg(long, default_value_t = 20)]
    pub bins: usize,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug)]
pub struct ToyArgs {
    /// Flat `key = value` config file applied over the reference config.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. `--set epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(flatten)]
    pub common: Common,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Eval(a) => commands::eval(&a),
        Command::Uncertainty(a) => commands::uncertainty(&a),
        Command::Prcurve(a) => commands::prcurve(&a),
        Command::Shift(a) => commands::shift(&a),
        Command::Toy(a) => commands::toy(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
