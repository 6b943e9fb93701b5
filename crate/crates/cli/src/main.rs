mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use forecast_dynamics::calibration::{MeanScale, RhoAveraging};

/// Dynamic probabilistic forecasts: calibration, verification, simulation
/// and wind-power trading.
#[derive(Debug, Parser)]
#[command(name = "fcdyn", version)]
struct Cli {
    /// Worker threads (results do not depend on it). Defaults to
    /// FCDYN_THREADS, then to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit EMOS coefficients, the shared shape and the ρ schedule.
    Calibrate(CalibrateArgs),
    /// Verify raw and calibrated forecasts (MSE, CRPS, ranks, PIT, intervals).
    Score(ScoreArgs),
    /// Simulate forecast trajectories and predictive bands.
    Simulate(SimulateArgs),
    /// Train and compare trading policies of models A and B.
    Trade(TradeArgs),
    /// Generate data from known parameters and calibrate it back.
    Recover(RecoverArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Linear,
    Log,
}

impl From<ScaleArg> for MeanScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Linear => MeanScale::Linear,
            ScaleArg::Log => MeanScale::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AveragingArg {
    PerRecord,
    Pooled,
}

impl From<AveragingArg> for RhoAveraging {
    fn from(a: AveragingArg) -> Self {
        match a {
            AveragingArg::PerRecord => RhoAveraging::PerRecord,
            AveragingArg::Pooled => RhoAveraging::Pooled,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub ensembles: PathBuf,
    #[arg(long)]
    pub realizations: PathBuf,
    /// temperature | wind_speed
    #[arg(long)]
    pub variable: String,
    /// nig | log_nig; defaults from the variable.
    #[arg(long)]
    pub family: Option<String>,
    /// Calibration settings (TOML); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mean_scale: Option<ScaleArg>,
    #[arg(long, value_enum)]
    pub rho_averaging: Option<AveragingArg>,
    /// Comma-separated horizons in hours.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<u32>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Coefficients file to write (TOML).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Coefficients from `calibrate`; without it only the raw ensemble is
    /// scored.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    #[arg(long)]
    pub ensembles: PathBuf,
    #[arg(long)]
    pub realizations: PathBuf,
    #[arg(long)]
    pub variable: String,
    /// Keep issue times from this instant (RFC 3339).
    #[arg(long)]
    pub from: Option<String>,
    /// Keep issue times up to this instant (RFC 3339).
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub pit_bins: usize,
    #[arg(long, default_value_t = 0.9)]
    pub ci_level: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Score on the log scale (default: on for positive families).
    #[arg(long)]
    pub log_scale: Option<bool>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model file (TOML): family, b, rho, delivery, m0, v0.
    #[arg(long)]
    pub model: PathBuf,
    /// Comma-separated output times in hours.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Euler sub-steps per grid interval.
    #[arg(long, default_value_t = 50)]
    pub substeps: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TradeArgs {
    /// Experiment file (TOML); the reference experiment when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Skip writing the trained policies.
    #[arg(long)]
    pub no_policies: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecoverScale {
    /// 38 issue periods × 273 locations × 50 members.
    Full,
    /// 38 × 60 × 50.
    Small,
    /// 10 × 12 × 20, for smoke tests.
    Tiny,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// wind | temperature: the built-in generating values.
    #[arg(long)]
    pub family: Option<String>,
    /// Generating values (TOML), instead of a built-in set.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub scale: RecoverScale,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub rho_averaging: Option<AveragingArg>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<forecast_dynamics::Error>()) {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("FCDYN_LOG", "info")).init();
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| std::env::var("FCDYN_THREADS").ok().and_then(|s| s.parse().ok()));
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Score(a) => commands::score(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Trade(a) => commands::trade(a),
        Command::Recover(a) => commands::recover(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
