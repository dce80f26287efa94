use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fastphase::{MultiIndex, Shape};

mod commands;
mod sweep;

/// Fourier phase retrieval by winding estimation, discrete Schwarz
/// initialization and trust-region refinement.
#[derive(Debug, Parser)]
#[command(name = "fastphase", version, propagate_version = true)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a Schwarz instance directory (y.fpt, truth.fpt, meta.json).
    Gen(GenArgs),
    /// Recover the object of an instance; writes xhat.fpt and report.json.
    Solve(SolveArgs),
    /// Estimate the winding index of an instance and print it as JSON.
    Winding(WindingArgs),
    /// Write the Schwarz initial guess of an instance.
    SchwarzInit(SchwarzInitArgs),
    /// Run an experiment sweep; writes a CSV and summary.json.
    #[command(subcommand)]
    Sweep(sweep::SweepCommand),
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Base seed.
    #[arg(long, env = "FASTPHASE_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Support box, e.g. 8x8.
    #[arg(long)]
    pub shape: Shape,
    /// Dominant index, e.g. 1,1.
    #[arg(long)]
    pub w: MultiIndex,
    /// Dominance ratio, at least 2.
    #[arg(long, default_value_t = fastphase::instance::DEFAULT_RHO)]
    pub rho: f64,
    /// Measurement grid is this multiple of the support per axis.
    #[arg(long, default_value_t = 2)]
    pub oversampling: usize,
    /// Add white Gaussian noise at this SNR in dB.
    #[arg(long)]
    pub snr: Option<f64>,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Stop once the cost falls to this value.
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    /// Outer trust-region iteration cap.
    #[arg(long, default_value_t = 500)]
    pub max_outer: usize,
    /// Resampling factor of the Schwarz transform.
    #[arg(long, default_value_t = 1)]
    pub factor: usize,
    /// Phase regularization weight.
    #[arg(long, default_value_t = fastphase::wirtinger::DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Winding estimator: `mirrored` or `box`.
    #[arg(long, default_value = "mirrored")]
    pub winding_rule: String,
    /// Perturbed restarts when the index is its own reflection.
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    /// Ranked winding candidates tried when the fit stays poor.
    #[arg(long, default_value_t = 2)]
    pub candidates: usize,
    /// Disable the diagonal preconditioner.
    #[arg(long)]
    pub no_precond: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Instance directory.
    #[arg(long)]
    pub instance: PathBuf,
    /// Output directory; defaults to the instance directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct WindingArgs {
    /// Instance directory.
    #[arg(long)]
    pub instance: PathBuf,
    /// Winding estimator: `mirrored` or `box`.
    #[arg(long, default_value = "mirrored")]
    pub winding_rule: String,
    /// Number of ranked candidates to print.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SchwarzInitArgs {
    /// Instance directory.
    #[arg(long)]
    pub instance: PathBuf,
    /// Index to use; estimated from the measurement when absent.
    #[arg(long)]
    pub w: Option<MultiIndex>,
    /// Resampling factor of the Schwarz transform.
    #[arg(long, default_value_t = 1)]
    pub factor: usize,
    /// Output tensor file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Process outcome with the documented exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Io(String),
    NotConverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 64,
            Failure::Io(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::NotConverged(m) => m,
        }
    }
}

impl From<fastphase::Error> for Failure {
    fn from(e: fastphase::Error) -> Self {
        use fastphase::Error as E;
        match e {
            E::Parameter(_) | E::SizeGuard(_) | E::Infeasible(_) => Failure::Usage(e.to_string()),
            E::Numeric { .. } => Failure::NotConverged(e.to_string()),
            _ => Failure::Io(e.to_string()),
        }
    }
}

pub type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Solve(a) => commands::solve(a),
        Command::Winding(a) => commands::winding(a),
        Command::SchwarzInit(a) => commands::schwarz_init(a),
        Command::Sweep(s) => sweep::run(s),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fastphase: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
