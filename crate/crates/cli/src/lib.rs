//! Experiment runner around the solver library: loads JSON configs,
//! assembles systems into restricted problems, solves them, and emits
//! plot-ready CSV artifacts plus JSON summaries.

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod run_example;
pub mod runners;

use std::path::Path;

use artifacts::ArtifactDir;
use config::{ExperimentConfig, ExperimentKind};

/// Outcome of a completed run. Certification failures still produce all
/// artifacts; the caller maps them to exit code 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    CertificationFailed,
}

/// Runs the configured experiment, honoring output-directory and seed
/// overrides from the command line.
pub fn run(
    config: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> anyhow::Result<RunStatus> {
    let mut config = config.clone();
    if let Some(dir) = out_override {
        config.out_dir = dir.to_path_buf();
    }
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let problems = config.problems();
    if !problems.is_empty() {
        anyhow::bail!("invalid config: {}", problems.join("; "));
    }
    let out = ArtifactDir::create(&config.out_dir)?;
    let seed = config.seed;
    match config.kind {
        ExperimentKind::RunningExample => {
            let cfg = config.running_example.clone().unwrap_or_default();
            run_example::run_example(&cfg, seed, &out)
        }
        ExperimentKind::TabularOracle => {
            let cfg = config.tabular.clone().unwrap_or_default();
            runners::run_tabular(&cfg, seed, &out)
        }
        ExperimentKind::Linear => {
            let cfg = config.linear.clone().unwrap_or_default();
            runners::run_linear(&cfg, seed, &out)
        }
        ExperimentKind::Pendulum => {
            let cfg = config.pendulum.clone().unwrap_or_default();
            runners::run_pendulum(&cfg, seed, &out)
        }
        ExperimentKind::Custom => {
            let cfg = config
                .custom
                .clone()
                .ok_or_else(|| anyhow::anyhow!("custom experiments need a custom block"))?;
            runners::run_custom(&cfg, seed, &out)
        }
    }
}

/// The `oracle-tabular` subcommand: prints the comparison summary as JSON
/// and reports whether the solver matched the enumeration oracle.
pub fn oracle_tabular(states: usize, actions: usize, seed: u64) -> anyhow::Result<(String, bool)> {
    let cfg = config::TabularConfig {
        states,
        actions,
        ..Default::default()
    };
    if (actions as f64).powi(states as i32) > 5e6 {
        anyhow::bail!("enumeration budget exceeded: shrink states/actions");
    }
    let (summary, _) = runners::tabular_summary(&cfg, seed)?;
    let pass = summary.pass;
    Ok((serde_json::to_string_pretty(&summary)?, pass))
}
