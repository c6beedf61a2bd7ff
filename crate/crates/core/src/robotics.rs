//! Mechanical-system dynamics assembled from inertia, potential, external
//! force, and actuation handles; feedback linearization; stabilizing
//! sampled-data policies; stability and energy diagnostics; and sampled
//! reachable-set closures.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MpopSpec, PolicyFn};
use crate::restriction::{BoxRegion, CompactSet, SampledClosure};
use crate::sampled_data::ZohConfig;

type InertiaHandle = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type InertiaJacobianHandle = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;
type GradientHandle = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type ExternalHandle = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync>;
type ActuationHandle = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
type DiffeomorphismHandle = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

const DEFAULT_FD_STEP: f64 = 1e-6;

/// An unconstrained mechanical system with `dof` degrees of freedom and
/// `inputs` actuators. The state is `(q, qdot)` stacked into one vector.
///
/// `lambda_min` is the user-asserted uniform lower bound on the inertia
/// eigenvalues; [`RoboticSystem::spot_check_inertia`] probes it numerically
/// at sample configurations (a global proof is out of reach).
#[derive(Clone)]
pub struct RoboticSystem {
    dof: usize,
    inputs: usize,
    lambda_min: f64,
    fd_step: f64,
    inertia: InertiaHandle,
    inertia_jacobian: Option<InertiaJacobianHandle>,
    potential_gradient: GradientHandle,
    external: ExternalHandle,
    actuation: ActuationHandle,
}

impl RoboticSystem {
    pub fn new(
        dof: usize,
        inputs: usize,
        lambda_min: f64,
        inertia: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        potential_gradient: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        external: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        actuation: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if dof == 0 || inputs == 0 {
            return Err(Error::invalid("dof and inputs must be positive"));
        }
        if !(lambda_min.is_finite() && lambda_min > 0.0) {
            return Err(Error::invalid("lambda_min must be > 0"));
        }
        Ok(Self {
            dof,
            inputs,
            lambda_min,
            fd_step: DEFAULT_FD_STEP,
            inertia: Arc::new(inertia),
            inertia_jacobian: None,
            potential_gradient: Arc::new(potential_gradient),
            external: Arc::new(external),
            actuation: Arc::new(actuation),
        })
    }

    /// Installs an analytic inertia Jacobian: entry `k` of the returned list
    /// is the matrix of partials with respect to configuration coordinate
    /// `k`.
    pub fn with_inertia_jacobian(
        mut self,
        jacobian: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.inertia_jacobian = Some(Arc::new(jacobian));
        self
    }

    /// Central-difference step used when no analytic inertia Jacobian is
    /// installed.
    pub fn with_fd_step(mut self, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::invalid("finite-difference step must be > 0"));
        }
        self.fd_step = step;
        Ok(self)
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.inertia)(q)
    }

    pub fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.potential_gradient)(q)
    }

    pub fn external(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        (self.external)(q, qdot)
    }

    pub fn actuation(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.actuation)(q)
    }

    /// Kinetic energy `qdot' D(q) qdot / 2`.
    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        0.5 * (qdot.transpose() * self.inertia(q) * qdot)[(0, 0)]
    }

    /// Partials of the inertia matrix with respect to each configuration
    /// coordinate; analytic when installed, central differences otherwise.
    pub fn inertia_jacobian(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        if let Some(jac) = &self.inertia_jacobian {
            return jac(q);
        }
        let h = self.fd_step;
        (0..self.dof)
            .map(|k| {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[k] += h;
                qm[k] -= h;
                (self.inertia(&qp) - self.inertia(&qm)) / (2.0 * h)
            })
            .collect()
    }

    /// Verifies symmetry and the `lambda_min` eigenvalue floor of the
    /// inertia matrix at each probe configuration.
    pub fn spot_check_inertia(&self, probes: &[DVector<f64>]) -> Result<()> {
        for q in probes {
            let d = self.inertia(q);
            let asym = (&d - d.transpose()).abs().max();
            let scale = d.abs().max().max(1.0);
            if asym > 1e-9 * scale {
                return Err(Error::invalid(format!(
                    "inertia matrix asymmetric at q = {q:?}"
                )));
            }
            let shifted =
                &d - DMatrix::identity(self.dof, self.dof) * (self.lambda_min * (1.0 - 1e-9));
            if shifted.cholesky().is_none() {
                return Err(Error::invalid(format!(
                    "inertia eigenvalue floor {l} violated at q = {q:?}",
                    l = self.lambda_min
                )));
            }
        }
        Ok(())
    }

    fn split_state(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != 2 * self.dof {
            return Err(Error::invalid(format!(
                "state length {} does not match 2 * dof = {}",
                x.len(),
                2 * self.dof
            )));
        }
        Ok((
            DVector::from_column_slice(&x.as_slice()[..self.dof]),
            DVector::from_column_slice(&x.as_slice()[self.dof..]),
        ))
    }
}

/// Coriolis/centrifugal matrix in Christoffel-symbol form:
///
/// `C_ij = 1/2 sum_k (dD_ij/dq_k + dD_ik/dq_j - dD_jk/dq_i) qdot_k`.
///
/// This choice reproduces the standard Coriolis force vector `C qdot` and
/// additionally makes `Ddot - 2C` skew-symmetric as a matrix, which the
/// passivity diagnostics rely on.
pub fn coriolis(sys: &RoboticSystem, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
    let n = sys.dof();
    let jac = sys.inertia_jacobian(q);
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += 0.5
                    * (jac[k][(i, j)] + jac[j][(i, k)] - jac[i][(j, k)])
                    * qdot[k];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

/// `Ddot(q, qdot) = sum_k dD/dq_k qdot_k`.
pub fn inertia_rate(sys: &RoboticSystem, q: &DVector<f64>, qdot: &DVector<f64>) -> DMatrix<f64> {
    let n = sys.dof();
    let jac = sys.inertia_jacobian(q);
    let mut rate = DMatrix::zeros(n, n);
    for (k, dk) in jac.iter().enumerate() {
        rate += dk * qdot[k];
    }
    rate
}

/// State derivative `(qdot, D^{ -1 }(F_ext - C qdot - grad U + B u))`; the
/// linear solve uses a Cholesky factorization of the inertia matrix.
pub fn dynamics(sys: &RoboticSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    let (q, qdot) = sys.split_state(x)?;
    if u.len() != sys.inputs() {
        return Err(Error::invalid("input dimension mismatch"));
    }
    let d = sys.inertia(&q);
    let chol = d.cholesky().ok_or(Error::InertiaNotPD)?;
    let rhs = sys.external(&q, &qdot)
        - coriolis(sys, &q, &qdot) * &qdot
        - sys.potential_gradient(&q)
        + sys.actuation(&q) * u;
    let qddot = chol.solve(&rhs);
    let mut out = DVector::zeros(2 * sys.dof());
    out.rows_mut(0, sys.dof()).copy_from(&qdot);
    out.rows_mut(sys.dof(), sys.dof()).copy_from(&qddot);
    Ok(out)
}

/// Feedback-linearizing controller for fully actuated systems (`dof ==
/// inputs`, invertible actuation):
///
/// `u = B(q)^{-1} (C qdot + grad U - F_ext + D(q) v)`,
///
/// after which the closed-loop acceleration equals the auxiliary input `v`.
pub fn fbl_controller(
    sys: &RoboticSystem,
    x: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    if sys.dof() != sys.inputs() {
        return Err(Error::invalid(
            "feedback linearization needs dof == inputs",
        ));
    }
    let (q, qdot) = sys.split_state(x)?;
    if v.len() != sys.dof() {
        return Err(Error::invalid("auxiliary input dimension mismatch"));
    }
    let rhs = coriolis(sys, &q, &qdot) * &qdot + sys.potential_gradient(&q)
        - sys.external(&q, &qdot)
        + sys.inertia(&q) * v;
    let b = sys.actuation(&q);
    b.lu().solve(&rhs).ok_or(Error::ActuationSingular)
}

/// Linearization target and gain for [`stabilizing_policy`]: the policy
/// applies `v = -K Phi(x)` through the feedback-linearizing controller, so
/// `A - B K` must be Hurwitz.
#[derive(Clone)]
pub struct StabilizerSpec {
    k_gain: DMatrix<f64>,
    a: DMatrix<f64>,
    b_lin: DMatrix<f64>,
    phi: DiffeomorphismHandle,
}

impl StabilizerSpec {
    pub fn new(
        k_gain: DMatrix<f64>,
        a: DMatrix<f64>,
        b_lin: DMatrix<f64>,
        phi: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::invalid("A must be square"));
        }
        let d = a.nrows();
        let m = b_lin.ncols();
        if b_lin.nrows() != d || k_gain.nrows() != m || k_gain.ncols() != d {
            return Err(Error::invalid("stabilizer dimensions are inconsistent"));
        }
        Ok(Self {
            k_gain,
            a,
            b_lin,
            phi: Arc::new(phi),
        })
    }

    /// Identity transform for systems whose state is already the
    /// linearizing coordinate.
    pub fn identity_phi(
        k_gain: DMatrix<f64>,
        a: DMatrix<f64>,
        b_lin: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(k_gain, a, b_lin, |x: &DVector<f64>| x.clone())
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a - &self.b_lin * &self.k_gain
    }

    pub fn k_gain(&self) -> &DMatrix<f64> {
        &self.k_gain
    }
}

/// Hurwitz test: characteristic polynomial by the Faddeev-LeVerrier
/// recursion, then the Routh-Hurwitz criterion. Zero or sign-ambiguous
/// pivots (within 1e-12) report `false`.
pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.nrows() == 0 || m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let d = m.nrows();
    // Monic characteristic polynomial coefficients, highest degree first.
    let mut coeffs = Vec::with_capacity(d + 1);
    coeffs.push(1.0);
    let identity = DMatrix::<f64>::identity(d, d);
    let mut mk = m.clone();
    let mut c = -mk.trace();
    coeffs.push(c);
    for k in 2..=d {
        mk = m * (&mk + &identity * c);
        c = -mk.trace() / k as f64;
        coeffs.push(c);
    }
    if coeffs.iter().any(|v| !v.is_finite()) {
        return false;
    }
    routh_all_positive(&coeffs, 1e-12)
}

fn routh_all_positive(coeffs: &[f64], tol: f64) -> bool {
    let degree = coeffs.len() - 1;
    if degree == 0 {
        return true;
    }
    let cols = degree / 2 + 1;
    let mut prev = vec![0.0; cols + 1];
    let mut curr = vec![0.0; cols + 1];
    for (i, &c) in coeffs.iter().enumerate() {
        if i % 2 == 0 {
            prev[i / 2] = c;
        } else {
            curr[i / 2] = c;
        }
    }
    if prev[0] <= tol {
        return false;
    }
    for _row in 1..degree {
        if curr[0].abs() <= tol || curr[0] < 0.0 {
            return false;
        }
        let mut next = vec![0.0; cols + 1];
        for j in 0..cols {
            next[j] = (curr[0] * prev[j + 1] - prev[0] * curr[j + 1]) / curr[0];
        }
        prev = curr;
        curr = next;
    }
    curr[0] > tol
}

/// The continuous stabilizing policy `x -> k_fbl(x, -K Phi(x))`. Fails with
/// [`Error::NotHurwitz`] unless `A - B K` passes [`is_hurwitz`]; actuation
/// solve failures propagate from rollout sites.
pub fn stabilizing_policy(sys: &RoboticSystem, spec: &StabilizerSpec) -> Result<PolicyFn> {
    if !is_hurwitz(&spec.closed_loop()) {
        return Err(Error::NotHurwitz);
    }
    let sys = sys.clone();
    let spec = spec.clone();
    Ok(PolicyFn::fallible("fbl_stabilizer", move |s: &[f64]| {
        let x = DVector::from_column_slice(s);
        let v = -(&spec.k_gain * (spec.phi)(&x));
        let u = fbl_controller(&sys, &x, &v)?;
        Ok(u.as_slice().to_vec())
    }))
}

/// Classical RK4 over one sample period applied to the mechanical dynamics
/// directly (one inertia factorization per stage, instead of the two the
/// control affine split performs).
pub fn integrate_robotic_zoh(
    sys: &RoboticSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &ZohConfig,
) -> Result<DVector<f64>> {
    cfg.validate()?;
    let dt = cfg.sample_period / cfg.substeps as f64;
    let mut state = x.clone();
    for _ in 0..cfg.substeps {
        let k1 = dynamics(sys, &state, u)?;
        let k2 = dynamics(sys, &(&state + &k1 * (dt / 2.0)), u)?;
        let k3 = dynamics(sys, &(&state + &k2 * (dt / 2.0)), u)?;
        let k4 = dynamics(sys, &(&state + &k3 * dt), u)?;
        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                context: "robotic zero-order-hold integration".to_string(),
            });
        }
    }
    Ok(state)
}

/// Packages a sampled mechanical system as a deterministic MDP over the
/// stacked `(q, qdot)` state, with actuator-box admissibility. Equivalent
/// to wrapping the system as control affine and sampling it, but cheaper in
/// the inner loop.
pub fn make_robotic_mpop(
    sys: &RoboticSystem,
    reward: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    discount: f64,
    cfg: &ZohConfig,
    action_box: BoxRegion,
) -> Result<MpopSpec> {
    cfg.validate()?;
    if action_box.dim() != sys.inputs() {
        return Err(Error::invalid("action box dimension mismatch"));
    }
    let d = 2 * sys.dof();
    let sys = sys.clone();
    let cfg = *cfg;
    MpopSpec::new(
        d,
        action_box.dim(),
        discount,
        move |s: &[f64], a: &[f64]| {
            let x = DVector::from_column_slice(s);
            let u = DVector::from_column_slice(a);
            match integrate_robotic_zoh(&sys, &x, &u, &cfg) {
                Ok(next) => next.as_slice().to_vec(),
                Err(_) => vec![f64::NAN; d],
            }
        },
        reward,
        move |_s: &[f64], a: &[f64]| action_box.contains(a),
    )
}

/// Per-sample outcome of [`energy_bound_check`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyBoundReport {
    pub checked: usize,
    /// Indices of trajectory samples whose speed exceeded the bound.
    pub violations: Vec<usize>,
    /// Largest observed ratio of speed to bound.
    pub max_ratio: f64,
    pub pass: bool,
}

/// Checks the velocity growth bound
///
/// `|qdot(t)| <= (sqrt(2 T0 / lambda_min) + c0 t / lambda_min) exp(c1 t / lambda_min)`
///
/// along a recorded trajectory of `(time, state)` samples, with `T0` the
/// kinetic energy at the first sample and times measured from it.
pub fn energy_bound_check(
    sys: &RoboticSystem,
    trajectory: &[(f64, DVector<f64>)],
    c0: f64,
    c1: f64,
) -> Result<EnergyBoundReport> {
    if trajectory.is_empty() {
        return Err(Error::invalid("trajectory must be nonempty"));
    }
    if !(c0.is_finite() && c0 >= 0.0) || !(c1.is_finite() && c1 > 0.0) {
        return Err(Error::invalid("need c0 >= 0 and c1 > 0"));
    }
    if trajectory.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::invalid("trajectory times must be nondecreasing"));
    }
    let lambda = sys.lambda_min();
    let (q0, qd0) = sys.split_state(&trajectory[0].1)?;
    let t_start = trajectory[0].0;
    let t0_energy = sys.kinetic_energy(&q0, &qd0);
    let mut violations = Vec::new();
    let mut max_ratio = 0.0f64;
    for (i, (t, x)) in trajectory.iter().enumerate() {
        let (_, qdot) = sys.split_state(x)?;
        let tau = t - t_start;
        let bound =
            ((2.0 * t0_energy / lambda).sqrt() + c0 * tau / lambda) * (c1 * tau / lambda).exp();
        let speed = qdot.norm();
        let ratio = if bound > 0.0 {
            speed / bound
        } else if speed > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        max_ratio = max_ratio.max(ratio);
        if speed > bound + 1e-9 {
            violations.push(i);
        }
    }
    Ok(EnergyBoundReport {
        checked: trajectory.len(),
        pass: violations.is_empty(),
        violations,
        max_ratio,
    })
}

/// Samples initial states from `n_box`, rolls `policy` forward `steps`
/// steps, and returns the fattened closure of every visited state
/// (initial states included). Each visited state is a member of the result
/// by construction.
pub fn reachable_closure(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    n_box: &BoxRegion,
    steps: usize,
    sample_count: usize,
    margin: f64,
    rng_seed: u64,
) -> Result<CompactSet> {
    if steps == 0 || sample_count == 0 {
        return Err(Error::invalid("steps and sample_count must be >= 1"));
    }
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::invalid("margin must be finite and >= 0"));
    }
    if n_box.dim() != mdp.state_dim() {
        return Err(Error::invalid("initial box dimension mismatch"));
    }
    let dim = mdp.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut points = Vec::with_capacity(sample_count * (steps + 1) * dim);
    for _ in 0..sample_count {
        let mut state = n_box.sample_uniform(&mut rng);
        points.extend_from_slice(&state);
        for step in 0..steps {
            let (next, _) = crate::mdp::policy_step(mdp, policy, &state, step)?;
            state = next;
            points.extend_from_slice(&state);
        }
    }
    Ok(CompactSet::SampledClosure(SampledClosure::from_flat(
        dim, points, margin,
    )?))
}
