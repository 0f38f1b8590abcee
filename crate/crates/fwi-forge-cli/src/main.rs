//! `fwi-forge`: generate synthetic seismic datasets, invert them, score
//! their complexity, and validate packed directories.

mod analyze;
mod config;
mod generate;
mod invert;
mod validate;

use clap::{Parser, Subcommand};

/// Errors are split by exit code: usage problems exit 2, everything that
/// goes wrong at runtime exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "fwi-forge",
    version,
    about = "Synthetic subsurface velocity maps, seismic forward modeling, and full waveform inversion"
)]
struct Cli {
    /// Worker threads for shot- and sample-level parallelism
    /// (default: FWI_FORGE_JOBS or all cores). Output is identical for any
    /// value.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML config file supplying defaults; explicit flags win.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize velocity maps, simulate shot gathers, pack a dataset.
    Generate(generate::GenerateArgs),
    /// Run multi-scale FWI on dataset samples and report metrics.
    Invert(invert::InvertArgs),
    /// Score map complexity (SI, GSI, entropy) as CSV, with batch means.
    Analyze(analyze::AnalyzeArgs),
    /// Check a dataset directory: checksums, shapes, value ranges.
    Validate(validate::ValidateArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        match e {
            CliError::Usage(msg) => {
                eprintln!("error: {msg}");
                std::process::exit(2);
            }
            CliError::Runtime(err) => {
                eprintln!("error: {err:#}");
                std::process::exit(1);
            }
        }
    }
}

fn run(cli: Cli) -> CliResult {
    config::init_thread_pool(cli.jobs)?;
    let file = config::FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(args) => generate::run(args, &file),
        Command::Invert(args) => invert::run(args, &file),
        Command::Analyze(args) => analyze::run(args),
        Command::Validate(args) => validate::run(args),
    }
}
