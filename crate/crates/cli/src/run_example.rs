//! The scalar benchmark experiment: builds the interval-hull restriction of
//! the tanh system, compares it against the closed-form admissibility
//! oracle, solves the restricted problem on a grid, and emits figure-ready
//! CSV data plus a JSON summary.

use serde::Serialize;

use invariant_dp_core::grid::{ActionGrid, GridValueFn};
use invariant_dp_core::mdp::{value_iterate, MpopSpec};
use invariant_dp_core::restriction::{
    build_action_hull, check_forward_invariance, check_nonemptiness, restrict, BoxRegion,
    InvarianceReport, NonemptinessReport,
};
use invariant_dp_core::running_example;

use crate::artifacts::{stage_seed, ArtifactDir, CsvField};
use crate::config::{RewardKind, RunningExampleConfig};
use crate::RunStatus;

#[derive(Debug, Clone, Serialize)]
pub struct OracleAgreement {
    pub grid_points: usize,
    pub boundary_skipped: usize,
    pub mismatches: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EndpointCheck {
    pub s: f64,
    pub oracle_lo: f64,
    pub oracle_hi: f64,
    pub constructed_lo: f64,
    pub constructed_hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViSummary {
    pub sweeps: usize,
    pub final_residual: f64,
    pub error_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExampleSummary {
    pub schema: u32,
    pub kind: &'static str,
    pub seed: u64,
    pub discount: f64,
    pub hull: BoxRegion,
    pub oracle: OracleAgreement,
    pub c0_endpoints: Vec<EndpointCheck>,
    pub vi: ViSummary,
    pub invariance: InvarianceReport,
    pub nonemptiness: NonemptinessReport,
    pub certification_pass: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    v[n - 1] = hi;
    v
}

fn base_mdp(cfg: &RunningExampleConfig) -> anyhow::Result<MpopSpec> {
    Ok(match cfg.reward {
        RewardKind::Quadratic => running_example::mdp(cfg.discount)?,
        RewardKind::Gaussian => running_example::gaussian_reward_mdp(cfg.discount)?,
    })
}

/// Scans the action grid for the admissible interval at `s`; the set is an
/// interval, so its endpoints are the first and last admissible nodes.
fn constructed_interval(
    restricted: &invariant_dp_core::RestrictedMpop,
    s: f64,
    actions: &[Vec<f64>],
) -> (f64, f64) {
    let mut lo = f64::NAN;
    let mut hi = f64::NAN;
    for a in actions {
        if restricted.is_admissible(&[s], a) {
            if lo.is_nan() {
                lo = a[0];
            }
            hi = a[0];
        }
    }
    (lo, hi)
}

pub fn run_example(
    cfg: &RunningExampleConfig,
    seed: u64,
    out: &ArtifactDir,
) -> anyhow::Result<RunStatus> {
    let mdp = base_mdp(cfg)?;
    let s0 = running_example::state_set();
    let policy = running_example::invariance_policy();

    let hull = build_action_hull(
        std::slice::from_ref(&policy),
        &s0,
        cfg.hull_samples,
        stage_seed(seed, 1),
        cfg.hull_slack,
    )?;
    let restricted = restrict(&mdp, s0.clone(), vec![policy.clone()], hull.clone())?;

    // (a) Preimage figure data over the full action range.
    let mut preimage = out.csv("preimage.csv", &["s", "a", "in_preimage"])?;
    let s_axis = linspace(-1.0, 1.0, cfg.preimage_grid);
    let a_axis = linspace(
        cfg.preimage_action_range[0],
        cfg.preimage_action_range[1],
        cfg.preimage_grid,
    );
    for &s in &s_axis {
        for &a in &a_axis {
            let inside = (s + a.tanh()).abs() <= 1.0;
            preimage.row(&[
                CsvField::Float(s),
                CsvField::Float(a),
                CsvField::Int(inside as i64),
            ])?;
        }
    }
    preimage.finish()?;

    // (b) Admissible-interval graph: constructed restriction vs oracle.
    let state_axis = linspace(-1.0, 1.0, cfg.state_grid);
    let action_grid = ActionGrid::uniform(&hull, &[cfg.action_grid])?;
    let mut c0_graph = out.csv(
        "c0_graph.csv",
        &["s", "constructed_lo", "constructed_hi", "oracle_lo", "oracle_hi"],
    )?;
    for &s in &state_axis {
        let (clo, chi) = constructed_interval(&restricted, s, action_grid.actions());
        let (olo, ohi) = running_example::c0_interval(s)?;
        c0_graph.row(&[
            CsvField::Float(s),
            CsvField::Float(clo),
            CsvField::Float(chi),
            CsvField::Float(olo),
            CsvField::Float(ohi),
        ])?;
    }
    c0_graph.finish()?;

    // Oracle agreement over the acceptance grid, excluding pairs whose image
    // is within 1e-9 of the set boundary.
    let check_axis = linspace(-1.0, 1.0, 401);
    let mut mismatches = 0usize;
    let mut skipped = 0usize;
    for &s in &check_axis {
        for &a in &check_axis {
            let image = s + a.tanh();
            if (image.abs() - 1.0).abs() <= 1e-9 {
                skipped += 1;
                continue;
            }
            let constructed = restricted.is_admissible(&[s], &[a]);
            let oracle = running_example::admissible(s, a)?;
            if constructed != oracle {
                mismatches += 1;
            }
        }
    }
    let oracle = OracleAgreement {
        grid_points: check_axis.len() * check_axis.len(),
        boundary_skipped: skipped,
        mismatches,
        pass: mismatches == 0,
    };

    // (c, d) Value iteration on the restricted problem.
    let rmdp = restricted.to_mpop();
    let v0 = GridValueFn::zeros(vec![state_axis.clone()])?;
    let (value, diag) = value_iterate(
        &rmdp,
        &v0,
        action_grid.actions(),
        cfg.tol,
        cfg.max_sweeps,
    )?;
    let mut convergence = out.csv("vi_convergence.csv", &["sweep", "residual"])?;
    for (i, r) in diag.residual_history.iter().enumerate() {
        convergence.row(&[CsvField::Int(i as i64 + 1), CsvField::Float(*r)])?;
    }
    convergence.finish()?;
    let mut value_csv = out.csv("value_function.csv", &["x0", "value"])?;
    for flat in 0..value.node_count() {
        value_csv.row(&[
            CsvField::Float(value.node_coord(flat)[0]),
            CsvField::Float(value.values()[flat]),
        ])?;
    }
    value_csv.finish()?;

    // Certification of the invariance policy and the stored restriction.
    let invariance = check_forward_invariance(
        &mdp,
        &policy,
        &s0,
        cfg.certify_samples,
        cfg.certify_steps,
        stage_seed(seed, 2),
    )?;
    let nonemptiness = check_nonemptiness(&restricted, cfg.certify_samples, stage_seed(seed, 3))?;

    let c0_endpoints = [-0.9, 0.0, 0.9]
        .iter()
        .map(|&s| {
            let (olo, ohi) = running_example::c0_interval(s)?;
            let (clo, chi) = constructed_interval(&restricted, s, action_grid.actions());
            Ok(EndpointCheck {
                s,
                oracle_lo: olo,
                oracle_hi: ohi,
                constructed_lo: clo,
                constructed_hi: chi,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let certification_pass = oracle.pass && invariance.pass && nonemptiness.pass;
    let summary = ExampleSummary {
        schema: crate::config::SCHEMA_VERSION,
        kind: "running_example",
        seed,
        discount: cfg.discount,
        hull,
        oracle,
        c0_endpoints,
        vi: ViSummary {
            sweeps: diag.sweeps,
            final_residual: diag.final_residual,
            error_bound: diag.error_bound,
        },
        invariance,
        nonemptiness,
        certification_pass,
    };
    out.json("summary.json", &summary)?;
    Ok(if certification_pass {
        RunStatus::Success
    } else {
        RunStatus::CertificationFailed
    })
}
