//! Built-in mechanical models: pendulum, double integrator, and a two-link
//! planar arm, with serializable parameter blocks for the experiment
//! configs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robotics::{dynamics, RoboticSystem, StabilizerSpec};
use crate::sampled_data::ControlAffineSystem;

/// Point-mass pendulum: configuration is the angle from the downward
/// vertical, actuated by a torque at the pivot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.0,
        }
    }
}

pub fn pendulum(p: &PendulumParams) -> Result<RoboticSystem> {
    if p.mass <= 0.0 || p.length <= 0.0 || p.damping < 0.0 {
        return Err(Error::invalid("pendulum needs mass, length > 0, damping >= 0"));
    }
    let ml2 = p.mass * p.length * p.length;
    let mgl = p.mass * p.gravity * p.length;
    let damping = p.damping;
    let sys = RoboticSystem::new(
        1,
        1,
        ml2,
        move |_q| DMatrix::from_element(1, 1, ml2),
        move |q: &DVector<f64>| DVector::from_element(1, mgl * q[0].sin()),
        move |_q, qdot: &DVector<f64>| DVector::from_element(1, -damping * qdot[0]),
        move |_q| DMatrix::identity(1, 1),
    )?
    .with_inertia_jacobian(|_q| vec![DMatrix::zeros(1, 1)]);
    let probes: Vec<DVector<f64>> = (0..25)
        .map(|i| DVector::from_element(1, -3.2 + 0.26 * i as f64))
        .collect();
    sys.spot_check_inertia(&probes)?;
    Ok(sys)
}

/// Pendulum potential energy (zero at the downward rest position); used by
/// energy-drift diagnostics.
pub fn pendulum_energy(p: &PendulumParams, x: &[f64]) -> f64 {
    let (q, qdot) = (x[0], x[1]);
    0.5 * p.mass * p.length * p.length * qdot * qdot
        + p.mass * p.gravity * p.length * (1.0 - q.cos())
}

/// An n-dimensional double integrator dressed as a mechanical system:
/// identity inertia, no potential, no external force, identity actuation.
pub fn double_integrator(n: usize) -> Result<RoboticSystem> {
    RoboticSystem::new(
        n,
        n,
        1.0,
        move |_q| DMatrix::identity(n, n),
        move |_q| DVector::zeros(n),
        move |_q, _qdot| DVector::zeros(n),
        move |_q| DMatrix::identity(n, n),
    )
    .map(|sys| sys.with_inertia_jacobian(move |_q| vec![DMatrix::zeros(n, n); n]))
}

/// Planar two-link arm with revolute joints, both joints actuated. Angles
/// are measured from the horizontal; gravity acts downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoLinkArmParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub gravity: f64,
}

impl Default for TwoLinkArmParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 1.0 / 12.0,
            i2: 1.0 / 12.0,
            gravity: 9.81,
        }
    }
}

impl TwoLinkArmParams {
    fn coefficients(&self) -> (f64, f64, f64) {
        let alpha = self.i1
            + self.i2
            + self.m1 * self.lc1 * self.lc1
            + self.m2 * (self.l1 * self.l1 + self.lc2 * self.lc2);
        let beta = self.m2 * self.l1 * self.lc2;
        let delta = self.i2 + self.m2 * self.lc2 * self.lc2;
        (alpha, beta, delta)
    }

    fn inertia(&self, q2: f64) -> DMatrix<f64> {
        let (alpha, beta, delta) = self.coefficients();
        let c2 = q2.cos();
        DMatrix::from_row_slice(
            2,
            2,
            &[
                alpha + 2.0 * beta * c2,
                delta + beta * c2,
                delta + beta * c2,
                delta,
            ],
        )
    }

    /// Uniform lower eigenvalue bound, probed over a full turn of the
    /// elbow angle with a small safety factor.
    fn lambda_min_estimate(&self) -> f64 {
        let mut lambda = f64::INFINITY;
        for i in 0..=360 {
            let q2 = -std::f64::consts::PI + i as f64 * std::f64::consts::TAU / 360.0;
            let d = self.inertia(q2);
            let tr = d[(0, 0)] + d[(1, 1)];
            let det = d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)];
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            lambda = lambda.min(0.5 * (tr - disc));
        }
        lambda * 0.999
    }

    /// Potential energy with the horizontal configuration as reference.
    pub fn potential(&self, q: &[f64]) -> f64 {
        let g = self.gravity;
        (self.m1 * self.lc1 + self.m2 * self.l1) * g * q[0].sin()
            + self.m2 * self.lc2 * g * (q[0] + q[1]).sin()
    }
}

pub fn two_link_arm(p: &TwoLinkArmParams) -> Result<RoboticSystem> {
    let sys = two_link_arm_fd(p)?;
    let (_, beta, _) = p.coefficients();
    Ok(sys.with_inertia_jacobian(move |q: &DVector<f64>| {
        let s2 = q[1].sin();
        vec![
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(
                2,
                2,
                &[-2.0 * beta * s2, -beta * s2, -beta * s2, 0.0],
            ),
        ]
    }))
}

/// Two-link arm relying on the finite-difference inertia Jacobian; used to
/// exercise the numeric fallback against the analytic partials.
pub fn two_link_arm_fd(p: &TwoLinkArmParams) -> Result<RoboticSystem> {
    if p.m1 <= 0.0 || p.m2 <= 0.0 || p.l1 <= 0.0 || p.lc1 <= 0.0 || p.lc2 <= 0.0 {
        return Err(Error::invalid("arm masses and lengths must be > 0"));
    }
    if p.i1 < 0.0 || p.i2 < 0.0 {
        return Err(Error::invalid("arm link inertias must be >= 0"));
    }
    let lambda = p.lambda_min_estimate();
    if lambda <= 0.0 {
        return Err(Error::invalid("arm inertia matrix is not uniformly positive definite"));
    }
    let params = *p;
    let grav = *p;
    let sys = RoboticSystem::new(
        2,
        2,
        lambda,
        move |q: &DVector<f64>| params.inertia(q[1]),
        move |q: &DVector<f64>| {
            let g = grav.gravity;
            let c1 = q[0].cos();
            let c12 = (q[0] + q[1]).cos();
            DVector::from_vec(vec![
                (grav.m1 * grav.lc1 + grav.m2 * grav.l1) * g * c1 + grav.m2 * grav.lc2 * g * c12,
                grav.m2 * grav.lc2 * g * c12,
            ])
        },
        move |_q, _qdot| DVector::zeros(2),
        move |_q| DMatrix::identity(2, 2),
    )?;
    let mut probes = Vec::new();
    for i in 0..12 {
        for j in 0..12 {
            probes.push(DVector::from_vec(vec![
                -3.0 + 0.5 * i as f64,
                -3.0 + 0.5 * j as f64,
            ]));
        }
    }
    sys.spot_check_inertia(&probes)?;
    Ok(sys)
}

/// The full-state linearization target for a fully actuated system with `n`
/// degrees of freedom: `A = [[0, I], [0, 0]]`, `B = [[0], [I]]`.
pub fn full_state_target(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    a.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    let mut b = DMatrix::zeros(2 * n, n);
    b.view_mut((n, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    (a, b)
}

/// PD stabilizer `v = -Kp q - Kd qdot` against the full-state target, with
/// the identity as linearizing coordinates.
pub fn pd_stabilizer(n: usize, kp: &[f64], kd: &[f64]) -> Result<StabilizerSpec> {
    if kp.len() != n || kd.len() != n {
        return Err(Error::invalid("gain lists must have one entry per dof"));
    }
    let mut k = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        k[(i, i)] = kp[i];
        k[(i, n + i)] = kd[i];
    }
    let (a, b) = full_state_target(n);
    StabilizerSpec::identity_phi(k, a, b)
}

/// Wraps a mechanical system as a control affine system in the stacked
/// state `(q, qdot)`. Factorization failures surface as non-finite outputs,
/// which integration flags as blow-ups.
pub fn robotic_to_control_affine(sys: &RoboticSystem) -> ControlAffineSystem {
    let n = sys.dof();
    let m = sys.inputs();
    let drift_sys = sys.clone();
    let gain_sys = sys.clone();
    ControlAffineSystem::new(
        2 * n,
        m,
        move |x: &DVector<f64>| {
            dynamics(&drift_sys, x, &DVector::zeros(m))
                .unwrap_or_else(|_| DVector::from_element(2 * n, f64::NAN))
        },
        move |x: &DVector<f64>| {
            let q = DVector::from_column_slice(&x.as_slice()[..n]);
            let d = gain_sys.inertia(&q);
            let b = gain_sys.actuation(&q);
            match d.cholesky() {
                Some(chol) => {
                    let mut g = DMatrix::zeros(2 * n, m);
                    g.view_mut((n, 0), (n, m)).copy_from(&chol.solve(&b));
                    g
                }
                None => DMatrix::from_element(2 * n, m, f64::NAN),
            }
        },
    )
    .expect("positive dimensions")
}
