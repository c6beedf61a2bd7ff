//! The restricted-problem pipeline shared by the pendulum, linear, and
//! custom experiments: reachable closure, action hull, restriction,
//! invariance/nonemptiness certification, masked value iteration over the
//! closure's bounding box, and rollout cross-checks of the greedy policy.

use std::sync::Arc;

use serde::Serialize;

use invariant_dp_core::grid::{vi_on_grid_masked, ActionGrid, GridValueFn, MaskFill};
use invariant_dp_core::mdp::{extract_greedy, rollout_return, MpopSpec, PolicyFn};
use invariant_dp_core::restriction::{
    build_action_hull, check_forward_invariance, check_nonemptiness, restrict, BoxRegion,
    CompactSet, InvarianceReport, NonemptinessReport,
};
use invariant_dp_core::robotics::reachable_closure;

use crate::artifacts::{stage_seed, ArtifactDir, CsvField};
use crate::config::PipelineConfig;
use crate::run_example::ViSummary;
use crate::RunStatus;

pub struct PipelineInputs {
    pub kind: &'static str,
    /// The sampled base problem; admissibility is the actuator box.
    pub mdp: MpopSpec,
    /// Continuous policy expected to render the reachable closure invariant.
    pub policy: PolicyFn,
    /// Wall-clock seconds per discrete step (trajectory time stamps).
    pub sample_period: f64,
    pub cfg: PipelineConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosureStats {
    pub points: usize,
    pub margin: f64,
    pub bounding_box: BoxRegion,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridStats {
    pub nodes: usize,
    pub live: usize,
    pub dead: usize,
    pub fill_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RolloutCheckSummary {
    pub checked: usize,
    pub within_bound: usize,
    /// Rollouts that failed (e.g. the greedy policy left the restricted set
    /// between grid nodes); listed with status `error` in the CSV.
    pub errors: usize,
    pub max_gap: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub schema: u32,
    pub kind: &'static str,
    pub seed: u64,
    pub discount: f64,
    pub closure: ClosureStats,
    pub hull: BoxRegion,
    pub grid: GridStats,
    pub vi: ViSummary,
    pub invariance: InvarianceReport,
    pub nonemptiness: NonemptinessReport,
    pub rollout_check: RolloutCheckSummary,
    pub certification_pass: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    v[n - 1] = hi;
    v
}

/// Interpolation-slack estimate from the largest second difference along
/// each grid axis; the multilinear interpolant of a smooth function is off
/// by about an eighth of it inside a cell.
fn interpolation_slack(value: &GridValueFn) -> f64 {
    let axes = value.axes();
    let d = axes.len();
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * axes[k + 1].len();
    }
    let values = value.values();
    let mut worst = 0.0f64;
    for flat in 0..values.len() {
        let mut rem = flat;
        for k in 0..d {
            let i = rem / strides[k];
            rem %= strides[k];
            if i >= 1 && i + 1 < axes[k].len() {
                let second =
                    values[flat + strides[k]] - 2.0 * values[flat] + values[flat - strides[k]];
                worst = worst.max(second.abs());
            }
        }
    }
    worst / 8.0
}

pub fn run_pipeline(
    inputs: &PipelineInputs,
    seed: u64,
    out: &ArtifactDir,
) -> anyhow::Result<RunStatus> {
    let cfg = &inputs.cfg;
    let mdp = &inputs.mdp;
    let d = mdp.state_dim();
    let m = mdp.action_dim();

    let n_box = BoxRegion::new(
        cfg.n_box_half_width.iter().map(|w| -w).collect(),
        cfg.n_box_half_width.clone(),
    )?;

    // Closure of the sampled reachable set under the invariance policy.
    let closure = reachable_closure(
        mdp,
        &inputs.policy,
        &n_box,
        cfg.closure_steps,
        cfg.closure_samples,
        cfg.margin,
        stage_seed(seed, 1),
    )?;
    let closure_points = match &closure {
        CompactSet::SampledClosure(sc) => sc.len(),
        _ => 0,
    };

    let hull = build_action_hull(
        std::slice::from_ref(&inputs.policy),
        &closure,
        cfg.hull_samples,
        stage_seed(seed, 2),
        cfg.hull_slack,
    )?;
    let restricted = restrict(mdp, closure.clone(), vec![inputs.policy.clone()], hull.clone())?;

    let invariance = check_forward_invariance(
        mdp,
        &inputs.policy,
        &closure,
        cfg.invariance_samples,
        cfg.invariance_steps,
        stage_seed(seed, 3),
    )?;
    let nonemptiness =
        check_nonemptiness(&restricted, cfg.nonemptiness_samples, stage_seed(seed, 4))?;

    // Closed-loop preview trajectories under the invariance policy.
    let mut header: Vec<String> = vec!["traj".into(), "step".into(), "t".into()];
    header.extend((0..d).map(|k| format!("x{k}")));
    header.extend((0..m).map(|k| format!("u{k}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut trajectories = out.csv("trajectories.csv", &header_refs)?;
    {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stage_seed(seed, 5));
        for traj in 0..cfg.trajectory_count {
            let mut state = n_box.sample_uniform(&mut rng);
            for step in 0..=cfg.trajectory_steps {
                let action = inputs.policy.act(&state)?;
                let mut fields: Vec<CsvField> = vec![
                    CsvField::Int(traj as i64),
                    CsvField::Int(step as i64),
                    CsvField::Float(step as f64 * inputs.sample_period),
                ];
                fields.extend(state.iter().map(|v| CsvField::Float(*v)));
                fields.extend(action.iter().map(|v| CsvField::Float(*v)));
                trajectories.row(&fields)?;
                if step < cfg.trajectory_steps {
                    state = mdp.transition(&state, &action);
                }
            }
        }
    }
    trajectories.finish()?;

    // Masked value iteration over the closure's bounding box: corners of
    // the box may lie outside the closure tube and keep no admissible
    // action; they are pinned to the reward lower bound.
    let bbox = closure.bounding_box();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|k| linspace(bbox.lo()[k], bbox.hi()[k], cfg.state_grid[k]))
        .collect();
    let action_grid = ActionGrid::uniform(&hull, &vec![cfg.action_grid; m])?;
    let rmdp = restricted.to_mpop();
    let v0 = GridValueFn::zeros(axes)?;
    let masked = vi_on_grid_masked(
        &rmdp,
        &v0,
        &action_grid,
        cfg.tol,
        cfg.max_sweeps,
        MaskFill::RewardLowerBound,
    )?;

    let mut convergence = out.csv("vi_convergence.csv", &["sweep", "residual"])?;
    for (i, r) in masked.diagnostics.residual_history.iter().enumerate() {
        convergence.row(&[CsvField::Int(i as i64 + 1), CsvField::Float(*r)])?;
    }
    convergence.finish()?;

    let mut value_header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    value_header.push("value".into());
    value_header.push("live".into());
    let value_header_refs: Vec<&str> = value_header.iter().map(String::as_str).collect();
    let mut value_csv = out.csv("value_function.csv", &value_header_refs)?;
    for flat in 0..masked.value.node_count() {
        let mut fields: Vec<CsvField> = masked
            .value
            .node_coord(flat)
            .into_iter()
            .map(CsvField::Float)
            .collect();
        fields.push(CsvField::Float(masked.value.values()[flat]));
        fields.push(CsvField::Int(masked.live[flat] as i64));
        value_csv.row(&fields)?;
    }
    value_csv.finish()?;

    // Greedy-policy rollouts from a deterministic spread of live nodes,
    // compared against the grid value within the truncation + tolerance +
    // interpolation budget.
    let live_nodes: Vec<usize> = (0..masked.value.node_count())
        .filter(|&i| masked.live[i])
        .collect();
    let greedy = extract_greedy(&rmdp, Arc::new(masked.value.clone()), action_grid.actions());
    let slack = interpolation_slack(&masked.value);
    let discount = rmdp.discount();
    let bound = discount.powi(cfg.rollout_horizon as i32) * masked.reward_bound
        / (1.0 - discount)
        + (1.0 + discount) / (1.0 - discount) * (cfg.tol + slack);
    let mut rollout_header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    rollout_header.extend(["value".into(), "rollout".into(), "gap".into(), "status".into()]);
    let rollout_header_refs: Vec<&str> = rollout_header.iter().map(String::as_str).collect();
    let mut rollout_csv = out.csv("rollout_check.csv", &rollout_header_refs)?;
    let checks = cfg.rollout_checks.min(live_nodes.len());
    let mut within = 0usize;
    let mut errors = 0usize;
    let mut max_gap = 0.0f64;
    for k in 0..checks {
        let node = live_nodes[k * live_nodes.len() / checks.max(1)];
        let coord = masked.value.node_coord(node);
        let value = masked.value.values()[node];
        let (rollout, gap, status) =
            match rollout_return(&rmdp, &greedy, &coord, cfg.rollout_horizon) {
                Ok(r) => {
                    let gap = (r - value).abs();
                    if gap <= bound {
                        within += 1;
                    }
                    max_gap = max_gap.max(gap);
                    (r, gap, "ok")
                }
                Err(_) => {
                    errors += 1;
                    (f64::NAN, f64::NAN, "error")
                }
            };
        let mut fields: Vec<CsvField> = coord.into_iter().map(CsvField::Float).collect();
        fields.push(CsvField::Float(value));
        fields.push(CsvField::Float(rollout));
        fields.push(CsvField::Float(gap));
        fields.push(CsvField::Str(status));
        rollout_csv.row(&fields)?;
    }
    rollout_csv.finish()?;

    let certification_pass = invariance.pass && nonemptiness.pass;
    let summary = PipelineSummary {
        schema: crate::config::SCHEMA_VERSION,
        kind: inputs.kind,
        seed,
        discount,
        closure: ClosureStats {
            points: closure_points,
            margin: cfg.margin,
            bounding_box: bbox,
        },
        hull,
        grid: GridStats {
            nodes: masked.value.node_count(),
            live: live_nodes.len(),
            dead: masked.dead_count,
            fill_value: masked.fill_value,
        },
        vi: ViSummary {
            sweeps: masked.diagnostics.sweeps,
            final_residual: masked.diagnostics.final_residual,
            error_bound: masked.diagnostics.error_bound,
        },
        invariance,
        nonemptiness,
        rollout_check: RolloutCheckSummary {
            checked: checks,
            within_bound: within,
            errors,
            max_gap,
            bound,
        },
        certification_pass,
    };
    out.json("summary.json", &summary)?;
    Ok(if certification_pass {
        RunStatus::Success
    } else {
        RunStatus::CertificationFailed
    })
}
