use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use metastat::io;
use metastat::{Error, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Phase-plane trajectories from boundary seeds.
    Phase,
    /// Malthus parameter, Laplace transform scan and eigenvectors.
    Spectral,
    /// Density snapshots, birth rate, mass and convergence diagnostics.
    Simulate,
    /// Invariant battery with a pass/fail report.
    Validate,
}

/// Metastatic colony density under angiogenic control.
///
/// Exit codes: 0 pass, 1 validation failure, 2 configuration error,
/// 3 numerical failure. METASTAT_THREADS caps the worker count.
#[derive(Debug, Parser)]
#[command(name = "metastat", version)]
struct Cli {
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

fn threads() -> Result<Option<usize>, Error> {
    match std::env::var("METASTAT_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
                Ok(Some(n.min(avail)))
            }
            _ => Err(Error::Config(format!("METASTAT_THREADS must be a positive integer (got {v:?})"))),
        },
    }
}

fn run(cli: &Cli) -> Result<io::Outcome, Error> {
    if let Some(n) = threads()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mut cfg = RunConfig::from_path(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    io::write_config(&cfg, &cli.out)?;
    match cli.command {
        Command::Phase => io::cmd_phase(&cfg, &cli.out),
        Command::Spectral => io::cmd_spectral(&cfg, &cli.out),
        Command::Simulate => io::cmd_simulate(&cfg, &cli.out),
        Command::Validate => io::cmd_validate(&cfg, &cli.out, cfg.seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.message);
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("metastat: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
