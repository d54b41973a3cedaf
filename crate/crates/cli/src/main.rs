mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xfer_core::XferError;

/// Transfer dynamics on atomic measures.
#[derive(Debug, Parser)]
#[command(name = "xfer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One application of the transfer operator to input measures.
    Apply(ApplyArgs),
    /// Predicted against computed moments of one transfer.
    Moments(ApplyArgs),
    /// Iterate u ← T_B[u, u] from the scenario's normalized initial measure.
    Fixpoint(Common),
    /// Integrate the scenario with its configured scheme.
    Evolve(Common),
    /// Error of the Monte Carlo estimator against the exact transfer.
    Mc(McArgs),
    /// Run several schemes on one scenario and report their discrepancies.
    Compare(CompareArgs),
    /// Check a scenario against its declared bounds.
    Validate(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_atoms: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[command(flatten)]
    pub common: Common,
    /// First argument as a measure JSON file; the scenario's initial measure by default.
    #[arg(long)]
    pub u: Option<PathBuf>,
    /// Second argument; u by default.
    #[arg(long)]
    pub v: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct McArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1000,10000,100000,1000000")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub reps: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated list from atomic, grid, particles, ode. The first is the reference.
    #[arg(long, value_delimiter = ',', default_value = "atomic,grid")]
    pub schemes: Vec<String>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<XferError>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("XFER_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| XferError::Config(format!("XFER_THREADS = {v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Apply(a) => commands::apply(a),
        Command::Moments(a) => commands::moments(a),
        Command::Fixpoint(a) => commands::fixpoint(a),
        Command::Evolve(a) => commands::evolve(a),
        Command::Mc(a) => commands::mc(a),
        Command::Compare(a) => commands::compare(a),
        Command::Validate(a) => commands::validate(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
