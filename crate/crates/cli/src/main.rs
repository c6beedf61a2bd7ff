use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use invariant_dp::config::ExperimentConfig;
use invariant_dp::RunStatus;

/// Builds compactly restricted policy optimization problems from configured
/// control systems and solves them by value iteration.
#[derive(Parser)]
#[command(name = "invariant-dp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs an experiment config and writes its artifacts.
    Run {
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Checks a config for structural problems without running it.
    Validate { config: PathBuf },
    /// Solves a random finite problem by value iteration and by exhaustive
    /// policy enumeration, printing the comparison as JSON.
    OracleTabular {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        seed: u64,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_CERTIFICATION: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(EXIT_ERROR);
            }
            print!("{e}");
            return ExitCode::from(EXIT_OK);
        }
    };
    match cli.command {
        Command::Run { config, out, seed } => {
            let config = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_ERROR);
                }
            };
            match invariant_dp::run(&config, out.as_deref(), seed) {
                Ok(RunStatus::Success) => ExitCode::from(EXIT_OK),
                Ok(RunStatus::CertificationFailed) => {
                    eprintln!("certification failed; see summary.json");
                    ExitCode::from(EXIT_CERTIFICATION)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_ERROR)
                }
            }
        }
        Command::Validate { config } => match ExperimentConfig::from_path(&config) {
            Ok(c) => {
                let problems = c.validate();
                if problems.is_empty() {
                    println!("ok");
                    ExitCode::from(EXIT_OK)
                } else {
                    for p in &problems {
                        eprintln!("invalid: {p}");
                    }
                    ExitCode::from(EXIT_ERROR)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_ERROR)
            }
        },
        Command::OracleTabular {
            states,
            actions,
            seed,
        } => match invariant_dp::oracle_tabular(states, actions, seed) {
            Ok((json, pass)) => {
                println!("{json}");
                if pass {
                    ExitCode::from(EXIT_OK)
                } else {
                    ExitCode::from(EXIT_CERTIFICATION)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_ERROR)
            }
        },
    }
}
