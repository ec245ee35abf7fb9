use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stlod_cli::experiments::{cmd_correctors, cmd_solve, run_convergence, run_decay, run_estimate, run_multirhs};
use stlod_cli::table::Table;
use stlod_cli::{CliError, Config};

#[derive(Parser)]
#[command(name = "stlod", version, about = "Localized space-time multiscale experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Corrector cache, read if present and written otherwise.
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Output file; CSV for every command except `correctors`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = default_workers())]
    workers: usize,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Compute all correctors and write the cache.
    Correctors,
    /// Solve with constant forcing and write the solution at coarse times.
    Solve,
    /// Localization error against k and ℓ for the central basis function.
    Decay,
    /// Errors over a sweep of H = 𝒯.
    Convergence,
    /// Errors for many random right-hand sides sharing one cache.
    Multirhs,
    /// Localization indicators on every coarse space-time element.
    Estimate,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn emit(table: &Table, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => table.write(path),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&table.to_bytes()?)?;
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config_path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = Config::load(config_path)?;
    let out = cli.out.as_deref();
    let cache = cli.cache.as_deref();
    let workers = cli.workers.max(1);
    match cli.command {
        Command::Correctors => {
            let path = out.or(cache).ok_or_else(|| CliError::Config("correctors needs --out or --cache".into()))?;
            let op = cmd_correctors(&cfg, path, workers)?;
            eprintln!(
                "wrote {} blocks ({} chains, {} interval problems, max constraint residual {:.3e}) to {}",
                op.len(),
                op.stats.chains,
                op.stats.intervals_solved,
                op.stats.max_constraint_residual,
                path.display()
            );
        }
        Command::Solve => emit(&cmd_solve(&cfg, cache, workers)?, out)?,
        Command::Decay => emit(&run_decay(&cfg, workers)?.table(), out)?,
        Command::Convergence => emit(&run_convergence(&cfg, workers)?.table(), out)?,
        Command::Multirhs => {
            let report = run_multirhs(&cfg, cache, workers)?;
            let lo = report.errors.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = report.errors.iter().copied().fold(0.0, f64::max);
            eprintln!(
                "{} right-hand sides, relative errors in [{lo:.4e}, {hi:.4e}], corrector builds {}, cache hits {}",
                report.errors.len(),
                report.counter.builds,
                report.counter.hits
            );
            emit(&report.table(), out)?;
        }
        Command::Estimate => emit(&run_estimate(&cfg, cache, workers)?.table(), out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stlod: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
