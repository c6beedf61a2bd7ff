//! Assembly of the per-kind experiments into the shared pipeline, plus the
//! self-contained tabular oracle run.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use invariant_dp_core::mdp::{extract_greedy, value_iterate, MpopSpec, PolicyFn};
use invariant_dp_core::models;
use invariant_dp_core::restriction::BoxRegion;
use invariant_dp_core::robotics::{is_hurwitz, make_robotic_mpop, stabilizing_policy, RoboticSystem};
use invariant_dp_core::sampled_data::{linear_zoh_exact, LinearSystem, ZohConfig};
use invariant_dp_core::tabular::TabularMpop;
use invariant_dp_core::Error;

use crate::artifacts::{ArtifactDir, CsvField};
use crate::config::{
    CustomConfig, LinearConfig, ModelKind, PendulumConfig, StateInputWeights, TabularConfig,
};
use crate::pipeline::{run_pipeline, PipelineInputs};
use crate::RunStatus;

fn quadratic_reward(w: StateInputWeights) -> impl Fn(&[f64], &[f64]) -> f64 + Send + Sync {
    move |s: &[f64], a: &[f64]| {
        let sq: f64 = s.iter().map(|v| v * v).sum();
        let uq: f64 = a.iter().map(|v| v * v).sum();
        -(w.state_weight * sq + w.input_weight * uq)
    }
}

#[allow(clippy::too_many_arguments)]
fn robotic_pipeline(
    kind: &'static str,
    sys: &RoboticSystem,
    kp: &[f64],
    kd: &[f64],
    sample_period: f64,
    substeps: usize,
    action_half_width: f64,
    reward: StateInputWeights,
    pipeline: &crate::config::PipelineConfig,
    seed: u64,
    out: &ArtifactDir,
) -> anyhow::Result<RunStatus> {
    let spec = models::pd_stabilizer(sys.dof(), kp, kd)?;
    let policy = stabilizing_policy(sys, &spec)?;
    let zoh = ZohConfig::new(sample_period, substeps)?;
    let action_box = BoxRegion::symmetric(action_half_width, sys.inputs())?;
    let mdp = make_robotic_mpop(
        sys,
        quadratic_reward(reward),
        pipeline.discount,
        &zoh,
        action_box,
    )?;
    run_pipeline(
        &PipelineInputs {
            kind,
            mdp,
            policy,
            sample_period,
            cfg: pipeline.clone(),
        },
        seed,
        out,
    )
}

pub fn run_pendulum(cfg: &PendulumConfig, seed: u64, out: &ArtifactDir) -> anyhow::Result<RunStatus> {
    let sys = models::pendulum(&cfg.params)?;
    robotic_pipeline(
        "pendulum",
        &sys,
        &[cfg.kp],
        &[cfg.kd],
        cfg.sample_period,
        cfg.substeps,
        cfg.action_half_width,
        cfg.reward,
        &cfg.pipeline,
        seed,
        out,
    )
}

pub fn run_custom(cfg: &CustomConfig, seed: u64, out: &ArtifactDir) -> anyhow::Result<RunStatus> {
    let sys = match cfg.model {
        ModelKind::Pendulum => models::pendulum(&cfg.pendulum_params.unwrap_or_default())?,
        ModelKind::DoubleIntegrator => models::double_integrator(cfg.integrator_dof)?,
        ModelKind::TwoLinkArm => models::two_link_arm(&cfg.arm_params.unwrap_or_default())?,
    };
    robotic_pipeline(
        "custom",
        &sys,
        &cfg.kp,
        &cfg.kd,
        cfg.sample_period,
        cfg.substeps,
        cfg.action_half_width,
        cfg.reward,
        &cfg.pipeline,
        seed,
        out,
    )
}

pub fn run_linear(cfg: &LinearConfig, seed: u64, out: &ArtifactDir) -> anyhow::Result<RunStatus> {
    let sys = LinearSystem::from_rows(&cfg.a, &cfg.b)?;
    let d = sys.state_dim();
    let m = sys.input_dim();
    let k = DMatrix::from_row_iterator(m, d, cfg.k_gain.iter().flatten().copied());
    if !is_hurwitz(&(sys.a() - sys.b() * &k)) {
        return Err(Error::NotHurwitz.into());
    }
    let policy_gain = k.clone();
    let policy = PolicyFn::new("linear_feedback", move |s: &[f64]| {
        (-&policy_gain * DVector::from_column_slice(s))
            .as_slice()
            .to_vec()
    });
    let h = cfg.sample_period;
    let step_sys = sys.clone();
    let action_box = BoxRegion::symmetric(cfg.action_half_width, m)?;
    let reward = quadratic_reward(cfg.reward);
    let mdp = MpopSpec::new(
        d,
        m,
        cfg.pipeline.discount,
        move |s: &[f64], a: &[f64]| {
            let x = DVector::from_column_slice(s);
            let u = DVector::from_column_slice(a);
            match linear_zoh_exact(&step_sys, &x, &u, h) {
                Ok(next) => next.as_slice().to_vec(),
                Err(_) => vec![f64::NAN; d],
            }
        },
        reward,
        move |_s: &[f64], a: &[f64]| action_box.contains(a),
    )?;
    run_pipeline(
        &PipelineInputs {
            kind: "linear",
            mdp,
            policy,
            sample_period: cfg.sample_period,
            cfg: cfg.pipeline.clone(),
        },
        seed,
        out,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct TabularSummary {
    pub schema: u32,
    pub kind: &'static str,
    pub seed: u64,
    pub states: usize,
    pub actions: usize,
    pub discount: f64,
    pub sweeps: usize,
    pub final_residual: f64,
    /// Largest |value-iteration - enumeration| disagreement over states.
    pub max_difference: f64,
    /// Largest disagreement between the greedy policy's exact value and the
    /// enumeration optimum.
    pub greedy_max_difference: f64,
    pub pass: bool,
}

/// Solves a seeded random finite problem twice (value iteration and
/// exhaustive policy enumeration) and reports the disagreement.
pub fn tabular_summary(cfg: &TabularConfig, seed: u64) -> anyhow::Result<(TabularSummary, Vec<[f64; 3]>)> {
    let t = TabularMpop::random(cfg.states, cfg.actions, cfg.discount, seed)?;
    let (vstar, _) = t.enumerate_optimal()?;
    let mdp = t.to_mpop();
    let (v, diag) = value_iterate(
        &mdp,
        &t.state_grid()?,
        &t.action_list(),
        cfg.tol,
        cfg.max_sweeps,
    )?;
    let mut rows = Vec::with_capacity(cfg.states);
    let mut max_difference = 0.0f64;
    for s in 0..cfg.states {
        let diff = (v.values()[s] - vstar[s]).abs();
        max_difference = max_difference.max(diff);
        rows.push([s as f64, v.values()[s], vstar[s]]);
    }
    let greedy = extract_greedy(&mdp, std::sync::Arc::new(v), &t.action_list());
    let mut greedy_indices = Vec::with_capacity(cfg.states);
    for s in 0..cfg.states {
        greedy_indices.push(greedy.act(&[s as f64])?[0].round() as usize);
    }
    let greedy_value = t.policy_value(&greedy_indices)?;
    let greedy_max_difference = greedy_value
        .iter()
        .zip(&vstar)
        .map(|(g, v)| (g - v).abs())
        .fold(0.0f64, f64::max);
    let pass = max_difference <= 1e-8 && greedy_max_difference <= 1e-8;
    Ok((
        TabularSummary {
            schema: crate::config::SCHEMA_VERSION,
            kind: "tabular_oracle",
            seed,
            states: cfg.states,
            actions: cfg.actions,
            discount: cfg.discount,
            sweeps: diag.sweeps,
            final_residual: diag.final_residual,
            max_difference,
            greedy_max_difference,
            pass,
        },
        rows,
    ))
}

pub fn run_tabular(cfg: &TabularConfig, seed: u64, out: &ArtifactDir) -> anyhow::Result<RunStatus> {
    let (summary, rows) = tabular_summary(cfg, seed)?;
    let mut values = out.csv("values.csv", &["state", "vi_value", "enum_value", "abs_diff"])?;
    for row in &rows {
        values.row(&[
            CsvField::Float(row[0]),
            CsvField::Float(row[1]),
            CsvField::Float(row[2]),
            CsvField::Float((row[1] - row[2]).abs()),
        ])?;
    }
    values.finish()?;
    let pass = summary.pass;
    out.json("summary.json", &summary)?;
    Ok(if pass {
        RunStatus::Success
    } else {
        RunStatus::CertificationFailed
    })
}
