//! Batch front-end for rate-distance sweeps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use passive_bb84::sweep::{render_csv, render_json, run_sweep, OutputFormat, SweepConfig};
use passive_bb84::Error;

#[derive(Parser)]
#[command(
    name = "passive-bb84",
    version,
    about = "Finite-key secret key rates for fully passive decoy-state BB84"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the rate-distance sweep described by a TOML config file.
    Run {
        /// Path to the sweep configuration.
        #[arg(long)]
        config: PathBuf,
        /// Output file; overrides the config's `output`, defaults to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep only these modes (comma separated subset of
        /// finite, asymptotic, perfect_pe).
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<String>>,
        /// Override the search seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Print progress to stderr.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Parse and validate a config without running the sweep.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<SweepConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    SweepConfig::from_toml(&text)
}

fn apply_mode_filter(config: &mut SweepConfig, filter: &[String]) -> Result<(), Error> {
    for m in filter {
        if !matches!(m.as_str(), "finite" | "asymptotic" | "perfect_pe") {
            return Err(Error::Config(format!(
                "unknown mode {m:?}; expected finite, asymptotic, or perfect_pe"
            )));
        }
    }
    if !filter.iter().any(|m| m == "finite") {
        config.modes.finite_n.clear();
    }
    config.modes.asymptotic = filter.iter().any(|m| m == "asymptotic");
    config.modes.perfect_pe = filter.iter().any(|m| m == "perfect_pe");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { config } => {
            load_config(&config)?;
            println!("ok: {}", config.display());
            Ok(())
        }
        Command::Run { config, output, modes, seed, threads, verbose } => {
            let mut cfg = load_config(&config)?;
            if let Some(filter) = &modes {
                apply_mode_filter(&mut cfg, filter)?;
            }
            if let Some(seed) = seed {
                cfg.search.seed = seed;
            }
            cfg.validate()?;
            if let Some(n) = threads {
                // Ignore the error if a pool already exists (tests).
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            if verbose {
                eprintln!(
                    "sweep: {} distances, {} finite block sizes, budget {}",
                    cfg.distances.len(),
                    cfg.modes.finite_n.len(),
                    cfg.search.budget
                );
            }
            let rows = run_sweep(&cfg)?;
            let rendered = match cfg.format {
                OutputFormat::Csv => render_csv(&rows),
                OutputFormat::Json => render_json(&rows)?,
            };
            let target = output.or(cfg.output.clone());
            match target {
                Some(path) => {
                    std::fs::write(&path, rendered).map_err(|e| {
                        Error::Numerical(format!("cannot write {}: {e}", path.display()))
                    })?;
                    if verbose {
                        eprintln!("wrote {} rows to {}", rows.len(), path.display());
                    }
                }
                None => print!("{rendered}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Domain(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
