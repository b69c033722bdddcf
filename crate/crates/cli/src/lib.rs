//! Command-line front end. `fit` runs the fusion pipeline on a CSV file and
//! `simulate` runs the replicated simulation study.
//!
//! Failures are reported on standard error as one JSON object. Exit codes:
//! 0 on success, 1 for a numerical or I/O failure at run time, 2 for a
//! configuration or usage error.

pub mod config;
pub mod fit;
pub mod simulate;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use effectfuse::PsiModeKind;

pub use config::{RunConfig, StrategyChoice};

#[derive(Debug, Parser)]
#[command(name = "effectfuse", version, about = "Bayesian effect fusion for categorical predictors")]
pub struct Cli {
    /// Suppress progress reporting on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the fusion model to a CSV file, select partitions and refit.
    Fit(FitArgs),
    /// Run the simulation study and write its result tables.
    Simulate(SimulateArgs),
}

/// Flags shared by both subcommands; each overrides the configuration file.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed of the sampler and refit chains.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated prior resolutions.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub nu: Option<Vec<f64>>,
    /// Spike variance mode: fixed or random.
    #[arg(long, value_parser = parse_psi_mode)]
    pub psi_mode: Option<PsiModeKind>,
    /// Retained draws.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Burn-in sweeps.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_psi_mode(s: &str) -> Result<PsiModeKind, String> {
    s.parse()
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Input CSV (overrides `input` in the configuration).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Response column.
    #[arg(long)]
    pub response: Option<String>,
    /// Categorical columns as `name` or `name=baseline`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,
    /// Continuous columns, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub continuous: Option<Vec<String>>,
    /// Partition selection rule.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyChoice>,
    /// Log sampler progress every this many sweeps (0 disables).
    #[arg(long)]
    pub progress: Option<usize>,
    /// Also write every draw of the coefficients and allocations.
    #[arg(long)]
    pub write_trace: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Start from the reduced preset instead of the full-size study.
    #[arg(long, conflicts_with = "config")]
    pub desk_scale: bool,
    /// Number of replications.
    #[arg(long)]
    pub replications: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or inputs.
    Config(String),
    /// Failure while running that is not tied to one library error.
    Runtime(String),
    Core(effectfuse::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::Core(e) if e.is_configuration() => 2,
            CliError::Core(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        if self.exit_code() == 2 {
            "configuration"
        } else {
            "runtime"
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "exit_code": self.exit_code(),
            }
        })
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<effectfuse::Error> for CliError {
    fn from(e: effectfuse::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Fit(args) => fit::cmd_fit(&args, cli.quiet),
        Command::Simulate(args) => simulate::cmd_simulate(&args),
    }
}

fn init_logging(quiet: bool) {
    let level = if quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Parses `args`, runs the command and returns the process exit code. A
/// one-line JSON status goes to standard output on success.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::Config(e.render().to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    init_logging(cli.quiet);
    match run(cli) {
        Ok(status) => {
            println!("{status}");
            0
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.exit_code()
        }
    }
}
