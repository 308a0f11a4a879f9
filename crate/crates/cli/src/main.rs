use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rsmimo::analysis::{self, VerifyOptions};
use rsmimo::sim::{self, Scenario};

/// Rate-splitting multiuser MIMO link-level simulator.
#[derive(Parser)]
#[command(name = "rsmimo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario sweep and write its CSV.
    Run {
        /// Catalog name (see `list`) or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Outer (channel estimate) draws.
        #[arg(long)]
        channels: Option<usize>,
        /// CSIT error draws per channel.
        #[arg(long)]
        errors: Option<usize>,
        /// Common-power search points.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long, env = "RSMIMO_WORKERS")]
        workers: Option<usize>,
        /// Write 0 in the `seconds` column so output depends only on inputs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Check the RBD closed forms against direct evaluation and write the
    /// deviations table.
    Verify {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "deviations.tsv")]
        out: PathBuf,
        #[arg(long, env = "RSMIMO_WORKERS")]
        workers: Option<usize>,
    },
    /// List the reference scenarios.
    List,
    /// Print a scenario in file format, as a starting point for custom runs.
    Show {
        scenario: String,
    },
}

fn apply_overrides(
    mut s: Scenario,
    seed: Option<u64>,
    channels: Option<usize>,
    errors: Option<usize>,
    grid: Option<usize>,
) -> Scenario {
    if let Some(v) = seed {
        s.seed = v;
    }
    if let Some(v) = channels {
        s.n_channels = v;
    }
    if let Some(v) = errors {
        s.n_errors = v;
    }
    if let Some(v) = grid {
        s.grid_size = v;
    }
    s
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            channels,
            errors,
            grid,
            workers,
            no_timing,
        } => {
            if workers == Some(0) {
                bail!("--workers must be at least 1");
            }
            let s = apply_overrides(sim::resolve_scenario(&scenario)?, seed, channels, errors, grid);
            let result = sim::run_scenario(&s, workers)?;
            match out {
                Some(path) => {
                    sim::emit_csv(&result, &path, !no_timing)?;
                    log::info!("wrote {}", path.display());
                }
                None => std::io::stdout()
                    .write_all(sim::csv_string(&result, !no_timing).as_bytes())
                    .context("writing to stdout")?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            instances,
            seed,
            out,
            workers,
        } => {
            let opts = VerifyOptions {
                instances,
                seed,
                ..Default::default()
            };
            let report = match workers {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()?
                    .install(|| analysis::verify_closed_forms(&opts))?,
                None => analysis::verify_closed_forms(&opts)?,
            };
            analysis::write_deviations(&report, &out)?;
            for c in &report.checks {
                println!(
                    "{} {:<40} max residual {:.3e}{}",
                    if c.passed() { "PASS" } else { "FAIL" },
                    c.anchor,
                    c.max_residual,
                    if c.corrected() { " (corrected form)" } else { "" }
                );
            }
            println!("deviations written to {}", out.display());
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::List => {
            let mut stdout = std::io::stdout().lock();
            for s in sim::reference_scenarios() {
                let line = writeln!(
                    stdout,
                    "{:<28} {:<5} {:<6} rs={:<5} {} channels x {} errors",
                    s.name,
                    s.precoder.name(),
                    s.combiner.name(),
                    s.rs_enabled,
                    s.n_channels,
                    s.n_errors
                );
                match line {
                    Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => break,
                    r => r?,
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Show { scenario } => {
            print!("{}", sim::scenario_to_string(&sim::resolve_scenario(&scenario)?));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
