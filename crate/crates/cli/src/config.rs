//! Experiment configuration: one versioned JSON document per run, with a
//! kind selector and one parameter block per experiment family. Every
//! random choice downstream derives from the single `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use invariant_dp_core::models::{PendulumParams, TwoLinkArmParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RunningExample,
    TabularOracle,
    Linear,
    Pendulum,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::RunningExample => "running_example",
            ExperimentKind::TabularOracle => "tabular_oracle",
            ExperimentKind::Linear => "linear",
            ExperimentKind::Pendulum => "pendulum",
            ExperimentKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_example: Option<RunningExampleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tabular: Option<TabularConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum: Option<PendulumConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `-s^2 - tanh(a)^2`
    #[default]
    Quadratic,
    /// `exp(-s^2) - tanh(a)^2`
    Gaussian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunningExampleConfig {
    pub discount: f64,
    pub reward: RewardKind,
    /// Nodes of the value-iteration state grid over [-1, 1].
    pub state_grid: usize,
    /// Nodes of the maximization action grid over the built hull.
    pub action_grid: usize,
    /// Per-axis resolution of the emitted preimage figure data.
    pub preimage_grid: usize,
    pub preimage_action_range: [f64; 2],
    pub hull_samples: usize,
    pub hull_slack: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    pub certify_samples: usize,
    pub certify_steps: usize,
}

impl Default for RunningExampleConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            reward: RewardKind::Quadratic,
            state_grid: 401,
            action_grid: 401,
            preimage_grid: 401,
            preimage_action_range: [-4.0, 4.0],
            hull_samples: 2048,
            hull_slack: 0.01,
            tol: 1e-8,
            max_sweeps: 5000,
            certify_samples: 400,
            certify_steps: 50,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularConfig {
    pub states: usize,
    pub actions: usize,
    pub discount: f64,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self {
            states: 4,
            actions: 3,
            discount: 0.9,
            tol: 1e-10,
            max_sweeps: 20_000,
        }
    }
}

/// Knobs shared by every restricted-pipeline experiment (pendulum, linear,
/// custom): reachable-closure construction, hull sampling, the value grid,
/// certification sample counts, and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub discount: f64,
    /// Half-widths of the initial-condition box N (one entry per state
    /// dimension).
    pub n_box_half_width: Vec<f64>,
    pub closure_samples: usize,
    pub closure_steps: usize,
    pub margin: f64,
    pub hull_samples: usize,
    pub hull_slack: f64,
    /// Value-grid nodes per state dimension.
    pub state_grid: Vec<usize>,
    /// Action-grid nodes per input dimension.
    pub action_grid: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub invariance_samples: usize,
    pub invariance_steps: usize,
    pub nonemptiness_samples: usize,
    pub rollout_checks: usize,
    pub rollout_horizon: usize,
    pub trajectory_count: usize,
    pub trajectory_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            discount: 0.9,
            n_box_half_width: vec![0.3, 0.3],
            closure_samples: 400,
            closure_steps: 2000,
            margin: 0.02,
            hull_samples: 1000,
            hull_slack: 0.01,
            state_grid: vec![41, 41],
            action_grid: 21,
            tol: 1e-6,
            max_sweeps: 600,
            invariance_samples: 200,
            invariance_steps: 200,
            nonemptiness_samples: 300,
            rollout_checks: 10,
            rollout_horizon: 400,
            trajectory_count: 5,
            trajectory_steps: 400,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumConfig {
    pub params: PendulumParams,
    pub sample_period: f64,
    pub substeps: usize,
    pub kp: f64,
    pub kd: f64,
    /// Actuator torque limit (admissible box half-width).
    pub action_half_width: f64,
    pub reward: StateInputWeights,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl Default for PendulumConfig {
    fn default() -> Self {
        Self {
            params: PendulumParams::default(),
            sample_period: 0.005,
            // dt = 1 ms per RK4 substep; far inside the integrator's
            // accuracy range for these dynamics.
            substeps: 5,
            kp: 1.0,
            kd: 1.0,
            action_half_width: 25.0,
            reward: StateInputWeights::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

/// Quadratic reward `-(state_weight * |x|^2 + input_weight * |u|^2)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateInputWeights {
    pub state_weight: f64,
    pub input_weight: f64,
}

impl Default for StateInputWeights {
    fn default() -> Self {
        Self {
            state_weight: 1.0,
            input_weight: 0.01,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k_gain: Vec<Vec<f64>>,
    pub sample_period: f64,
    pub action_half_width: f64,
    pub reward: StateInputWeights,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            a: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            b: vec![vec![0.0], vec![1.0]],
            k_gain: vec![vec![1.0, 1.0]],
            sample_period: 0.05,
            action_half_width: 10.0,
            reward: StateInputWeights::default(),
            pipeline: PipelineConfig {
                closure_steps: 400,
                closure_samples: 300,
                invariance_steps: 100,
                ..PipelineConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Pendulum,
    DoubleIntegrator,
    TwoLinkArm,
}

/// A registry mechanical model with explicit gains and pipeline knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    pub model: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pendulum_params: Option<PendulumParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_params: Option<TwoLinkArmParams>,
    /// Degrees of freedom for the double-integrator model.
    #[serde(default = "default_di_dof")]
    pub integrator_dof: usize,
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub sample_period: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub action_half_width: f64,
    #[serde(default)]
    pub reward: StateInputWeights,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

fn default_di_dof() -> usize {
    1
}

fn default_substeps() -> usize {
    20
}

fn check(cond: bool, what: &str, problems: &mut Vec<String>) {
    if !cond {
        problems.push(what.to_string());
    }
}

fn check_pipeline(p: &PipelineConfig, state_dim: usize, problems: &mut Vec<String>) {
    check(
        (0.0..1.0).contains(&p.discount),
        "discount must lie in [0, 1)",
        problems,
    );
    check(
        p.n_box_half_width.len() == state_dim,
        "n_box_half_width needs one entry per state dimension",
        problems,
    );
    check(
        p.n_box_half_width.iter().all(|w| w.is_finite() && *w > 0.0),
        "n_box half-widths must be finite and > 0",
        problems,
    );
    check(p.closure_samples >= 1, "closure_samples must be >= 1", problems);
    check(p.closure_steps >= 1, "closure_steps must be >= 1", problems);
    check(
        p.margin.is_finite() && p.margin >= 0.0,
        "margin must be finite and >= 0",
        problems,
    );
    check(p.hull_samples >= 1, "hull_samples must be >= 1", problems);
    check(
        p.hull_slack.is_finite() && p.hull_slack >= 0.0,
        "hull_slack must be finite and >= 0",
        problems,
    );
    check(
        p.state_grid.len() == state_dim && p.state_grid.iter().all(|n| *n >= 2),
        "state_grid needs >= 2 nodes per state dimension",
        problems,
    );
    check(p.action_grid >= 1, "action_grid must be >= 1", problems);
    check(p.tol > 0.0, "tol must be > 0", problems);
    check(p.max_sweeps >= 1, "max_sweeps must be >= 1", problems);
    check(p.invariance_samples >= 1, "invariance_samples must be >= 1", problems);
    check(p.invariance_steps >= 1, "invariance_steps must be >= 1", problems);
    check(
        p.nonemptiness_samples >= 1,
        "nonemptiness_samples must be >= 1",
        problems,
    );
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("cannot parse {}: {e}", path.display()))?;
        Ok(config)
    }

    /// All structural problems with this config; empty means valid.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        check(
            self.schema == SCHEMA_VERSION,
            &format!("schema must be {SCHEMA_VERSION}"),
            &mut problems,
        );
        check(
            !self.out_dir.as_os_str().is_empty(),
            "out_dir must be nonempty",
            &mut problems,
        );
        match self.kind {
            ExperimentKind::RunningExample => {
                let c = self.running_example.clone().unwrap_or_default();
                check((0.0..1.0).contains(&c.discount), "discount must lie in [0, 1)", &mut problems);
                check(c.state_grid >= 2, "state_grid must be >= 2", &mut problems);
                check(c.action_grid >= 2, "action_grid must be >= 2", &mut problems);
                check(c.preimage_grid >= 2, "preimage_grid must be >= 2", &mut problems);
                check(
                    c.preimage_action_range[0] < c.preimage_action_range[1],
                    "preimage_action_range must be increasing",
                    &mut problems,
                );
                check(c.hull_samples >= 1, "hull_samples must be >= 1", &mut problems);
                check(
                    c.hull_slack.is_finite() && c.hull_slack >= 0.0,
                    "hull_slack must be finite and >= 0",
                    &mut problems,
                );
                check(c.tol > 0.0, "tol must be > 0", &mut problems);
                check(c.max_sweeps >= 1, "max_sweeps must be >= 1", &mut problems);
                check(c.certify_samples >= 1, "certify_samples must be >= 1", &mut problems);
                check(c.certify_steps >= 1, "certify_steps must be >= 1", &mut problems);
            }
            ExperimentKind::TabularOracle => {
                let c = self.tabular.clone().unwrap_or_default();
                check(c.states >= 1, "states must be >= 1", &mut problems);
                check(c.actions >= 1, "actions must be >= 1", &mut problems);
                check(
                    (c.actions as f64).powi(c.states as i32) <= 5e6,
                    "enumeration budget exceeded: shrink states/actions",
                    &mut problems,
                );
                check((0.0..1.0).contains(&c.discount), "discount must lie in [0, 1)", &mut problems);
                check(c.tol > 0.0, "tol must be > 0", &mut problems);
            }
            ExperimentKind::Linear => {
                let c = self.linear.clone().unwrap_or_default();
                let d = c.a.len();
                check(
                    d >= 1 && c.a.iter().all(|r| r.len() == d),
                    "A must be square and nonempty",
                    &mut problems,
                );
                let m = c.b.first().map_or(0, Vec::len);
                check(
                    c.b.len() == d && m >= 1 && c.b.iter().all(|r| r.len() == m),
                    "B must be d x m with m >= 1",
                    &mut problems,
                );
                check(
                    c.k_gain.len() == m && c.k_gain.iter().all(|r| r.len() == d),
                    "k_gain must be m x d",
                    &mut problems,
                );
                check(c.sample_period > 0.0, "sample_period must be > 0", &mut problems);
                check(
                    c.action_half_width > 0.0,
                    "action_half_width must be > 0",
                    &mut problems,
                );
                check_pipeline(&c.pipeline, d, &mut problems);
            }
            ExperimentKind::Pendulum => {
                let c = self.pendulum.clone().unwrap_or_default();
                check(c.sample_period > 0.0, "sample_period must be > 0", &mut problems);
                check(c.substeps >= 1, "substeps must be >= 1", &mut problems);
                check(
                    c.kp.is_finite() && c.kd.is_finite(),
                    "gains must be finite",
                    &mut problems,
                );
                check(
                    c.action_half_width > 0.0,
                    "action_half_width must be > 0",
                    &mut problems,
                );
                check_pipeline(&c.pipeline, 2, &mut problems);
            }
            ExperimentKind::Custom => match &self.custom {
                None => problems.push("custom experiments need a custom block".to_string()),
                Some(c) => {
                    let dof = match c.model {
                        ModelKind::Pendulum => 1,
                        ModelKind::DoubleIntegrator => c.integrator_dof,
                        ModelKind::TwoLinkArm => 2,
                    };
                    check(dof >= 1, "integrator_dof must be >= 1", &mut problems);
                    check(
                        c.kp.len() == dof && c.kd.len() == dof,
                        "kp/kd need one entry per degree of freedom",
                        &mut problems,
                    );
                    check(c.sample_period > 0.0, "sample_period must be > 0", &mut problems);
                    check(c.substeps >= 1, "substeps must be >= 1", &mut problems);
                    check(
                        c.action_half_width > 0.0,
                        "action_half_width must be > 0",
                        &mut problems,
                    );
                    check_pipeline(&c.pipeline, 2 * dof, &mut problems);
                }
            },
        }
        problems
    }

    /// Structural validation plus a write probe of the output directory.
    pub fn validate(&self) -> Vec<String> {
        let mut problems = self.problems();
        if problems.is_empty() {
            if let Err(e) = probe_writable(&self.out_dir) {
                problems.push(format!("out_dir {} is not writable: {e}", self.out_dir.display()));
            }
        }
        problems
    }
}

fn probe_writable(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"ok")?;
    std::fs::remove_file(&probe)
}
