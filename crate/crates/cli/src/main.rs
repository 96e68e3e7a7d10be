use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod exit;

use exit::exit_code;

#[derive(Parser, Debug)]
#[command(name = "regid", version, about = "Regime identification and regime-wise Granger causality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic series with ground truth.
    Generate(GenerateArgs),
    /// Segment a series into covariance regimes.
    Regimes(RegimesArgs),
    /// Whole-series and regime-wise VAR Granger causality.
    Causal(CausalArgs),
    /// Run the synthetic experiment end to end and check it.
    Reproduce(ReproduceArgs),
    /// Run generate/regimes/causal from one JSON config file.
    Run(RunArgs),
}

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["default_paper", "spec"]))]
pub struct GenerateArgs {
    /// Use the built-in reference spec.
    #[arg(long)]
    pub default_paper: bool,
    /// Spec JSON file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RegimesArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub window: usize,
    /// euclidean, log_euclidean or affine_invariant (alias riemannian).
    #[arg(long, default_value = "affine_invariant")]
    pub metric: String,
    /// Number of regimes, or "auto".
    #[arg(long, default_value = "auto")]
    pub k: String,
    #[arg(long, default_value_t = 2)]
    pub k_min: usize,
    #[arg(long, default_value_t = 8)]
    pub k_max: usize,
    #[arg(long, default_value_t = regid::windows::DEFAULT_SHRINKAGE)]
    pub shrinkage: f64,
    #[arg(long, default_value_t = 1)]
    pub min_run: usize,
    /// Reduce covariances to this many leading directions.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Window sweep start:stop:step; one output subdirectory per window.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Ground truth JSON; adds segmentation scores.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CausalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// segmentation.json from `regimes`; enables regime-wise graphs.
    #[arg(long)]
    pub segmentation: Option<PathBuf>,
    /// Ground truth JSON; enables scores.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = regid::var::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// VAR order, or "auto".
    #[arg(long, default_value = "auto")]
    pub order: String,
    #[arg(long, default_value_t = regid::var::DEFAULT_P_MAX)]
    pub p_max: usize,
    /// aic or bic.
    #[arg(long, default_value = "bic")]
    pub criterion: String,
    #[arg(long)]
    pub bonferroni: bool,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = regid::defaults::DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn init_workers() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("REGID_WORKERS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| exit::usage(format!("REGID_WORKERS must be a positive integer, got '{raw}'")))?;
    if n == 0 {
        return Err(exit::usage("REGID_WORKERS must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| exit::usage(format!("cannot configure {n} workers: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_workers().and_then(|()| match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Regimes(a) => commands::regimes(&a),
        Command::Causal(a) => commands::causal(&a),
        Command::Reproduce(a) => commands::reproduce(&a),
        Command::Run(a) => commands::run(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
