//! Deterministic metric MDPs and their Bellman machinery: rollouts, backups,
//! synchronous value iteration, greedy extraction, a single policy
//! improvement step, and the admissible-action distance function.
//!
//! Backups within one sweep are pure functions of the previous iterate; all
//! handles are `Send + Sync` so sweeps may be parallelized over nodes.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridValueFn;

type TransitionHandle = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type RewardHandle = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type AdmissibleHandle = Arc<dyn Fn(&[f64], &[f64]) -> bool + Send + Sync>;
type PolicyHandle = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// Sweep budget used by policy evaluation inside [`policy_improve`].
const POLICY_EVAL_MAX_SWEEPS: usize = 1_000_000;

/// A deterministic MDP: transition, reward, and admissibility handles over
/// flat `f64` state/action vectors, plus a discount in `[0, 1)`.
///
/// Transition and reward must be total on admissible pairs; non-finite
/// outputs are reported as hard errors by every operation, never clamped.
#[derive(Clone)]
pub struct MpopSpec {
    state_dim: usize,
    action_dim: usize,
    discount: f64,
    transition: TransitionHandle,
    reward: RewardHandle,
    admissible: AdmissibleHandle,
}

impl fmt::Debug for MpopSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MpopSpec")
            .field("state_dim", &self.state_dim)
            .field("action_dim", &self.action_dim)
            .field("discount", &self.discount)
            .finish()
    }
}

impl MpopSpec {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        discount: f64,
        transition: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        reward: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        admissible: impl Fn(&[f64], &[f64]) -> bool + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::from_handles(
            state_dim,
            action_dim,
            discount,
            Arc::new(transition),
            Arc::new(reward),
            Arc::new(admissible),
        )
    }

    pub fn from_handles(
        state_dim: usize,
        action_dim: usize,
        discount: f64,
        transition: TransitionHandle,
        reward: RewardHandle,
        admissible: AdmissibleHandle,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::invalid("state_dim and action_dim must be positive"));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid("discount must lie in [0, 1)"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            discount,
            transition,
            reward,
            admissible,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        (self.transition)(s, a)
    }

    pub fn reward(&self, s: &[f64], a: &[f64]) -> f64 {
        (self.reward)(s, a)
    }

    pub fn is_admissible(&self, s: &[f64], a: &[f64]) -> bool {
        (self.admissible)(s, a)
    }

    /// Same handles under a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::from_handles(
            self.state_dim,
            self.action_dim,
            discount,
            self.transition.clone(),
            self.reward.clone(),
            self.admissible.clone(),
        )
    }

    /// Same dynamics and admissibility under a different reward.
    pub fn with_reward(
        &self,
        reward: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::from_handles(
            self.state_dim,
            self.action_dim,
            self.discount,
            self.transition.clone(),
            Arc::new(reward),
            self.admissible.clone(),
        )
    }

    /// Replaces the admissibility rule, keeping dynamics and reward.
    pub fn with_admissible(
        &self,
        admissible: impl Fn(&[f64], &[f64]) -> bool + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::from_handles(
            self.state_dim,
            self.action_dim,
            self.discount,
            self.transition.clone(),
            self.reward.clone(),
            Arc::new(admissible),
        )
    }
}

/// A deterministic stationary policy: a selector of the admissibility
/// correspondence. Admissibility is checked at use sites, not here.
#[derive(Clone)]
pub struct PolicyFn {
    label: String,
    act: PolicyHandle,
}

impl fmt::Debug for PolicyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolicyFn({})", self.label)
    }
}

impl PolicyFn {
    pub fn new(
        label: impl Into<String>,
        act: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            act: Arc::new(move |s| Ok(act(s))),
        }
    }

    /// A policy whose handle may fail (e.g. a controller with a singular
    /// actuation solve); errors surface at rollout and backup sites.
    pub fn fallible(
        label: impl Into<String>,
        act: impl Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            act: Arc::new(act),
        }
    }

    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        (self.act)(s)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Convergence record of a value-iteration run.
///
/// `error_bound` is the a-posteriori distance to the fixed point of the
/// discretized operator: discount / (1 - discount) times the final residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViDiagnostics {
    pub sweeps: usize,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    pub error_bound: f64,
}

impl ViDiagnostics {
    pub(crate) fn from_history(residual_history: Vec<f64>, discount: f64) -> Self {
        let final_residual = residual_history.last().copied().unwrap_or(0.0);
        ViDiagnostics {
            sweeps: residual_history.len(),
            final_residual,
            error_bound: discount / (1.0 - discount) * final_residual,
            residual_history,
        }
    }
}

/// Anything that evaluates a state to a real value. Grid functions and
/// plain closures both qualify.
pub trait ValueFn: Send + Sync {
    fn value(&self, state: &[f64]) -> f64;
}

impl<F> ValueFn for F
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, state: &[f64]) -> f64 {
        self(state)
    }
}

impl ValueFn for GridValueFn {
    fn value(&self, state: &[f64]) -> f64 {
        self.eval(state)
    }
}

fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// One closed-loop step: queries the policy, checks admissibility and
/// finiteness, and returns the successor state with the collected reward.
pub(crate) fn policy_step(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    state: &[f64],
    step: usize,
) -> Result<(Vec<f64>, f64)> {
    let action = policy.act(state)?;
    if !all_finite(&action) {
        return Err(Error::non_finite(format!(
            "policy '{}' output at step {step}",
            policy.label()
        )));
    }
    if !mdp.is_admissible(state, &action) {
        return Err(Error::InadmissibleAction {
            step,
            state: state.to_vec(),
            action,
        });
    }
    let reward = mdp.reward(state, &action);
    let next = mdp.transition(state, &action);
    if !reward.is_finite() {
        return Err(Error::non_finite(format!("reward at step {step}")));
    }
    if !all_finite(&next) {
        return Err(Error::non_finite(format!("transition at step {step}")));
    }
    Ok((next, reward))
}

/// Discounted return of a truncated closed-loop rollout:
/// sum over t < horizon of discount^t r(s_t, policy(s_t)).
///
/// Truncating the infinite series leaves an error of at most
/// discount^horizon * M / (1 - discount) when rewards are bounded by M.
pub fn rollout_return(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    s0: &[f64],
    horizon: usize,
) -> Result<f64> {
    let mut state = s0.to_vec();
    let mut total = 0.0;
    let mut weight = 1.0;
    for step in 0..horizon {
        let (next, reward) = policy_step(mdp, policy, &state, step)?;
        total += weight * reward;
        weight *= mdp.discount();
        state = next;
    }
    Ok(total)
}

/// One optimal-operator backup over a finite candidate list:
/// max over admissible candidates of r(s,a) + discount * V(f(s,a)),
/// returning the value and the first maximizing action in list order.
pub fn bellman_backup(
    mdp: &MpopSpec,
    value: &dyn ValueFn,
    s: &[f64],
    candidates: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, a) in candidates.iter().enumerate() {
        if !mdp.is_admissible(s, a) {
            continue;
        }
        let q = backup_value(mdp, value, s, a)?;
        if best.is_none_or(|(bq, _)| q > bq) {
            best = Some((q, i));
        }
    }
    match best {
        Some((q, i)) => Ok((q, candidates[i].clone())),
        None => Err(Error::NoAdmissibleAction { state: s.to_vec() }),
    }
}

fn backup_value(mdp: &MpopSpec, value: &dyn ValueFn, s: &[f64], a: &[f64]) -> Result<f64> {
    let r = mdp.reward(s, a);
    if !r.is_finite() {
        return Err(Error::non_finite(format!("reward at state {s:?}")));
    }
    let next = mdp.transition(s, a);
    if !all_finite(&next) {
        return Err(Error::non_finite(format!("transition at state {s:?}")));
    }
    let v = value.value(&next);
    if !v.is_finite() {
        return Err(Error::non_finite(format!("value handle at state {next:?}")));
    }
    Ok(r + mdp.discount() * v)
}

/// One policy-operator backup: r(s, policy(s)) + discount * V(f(s, policy(s))).
pub fn policy_backup(
    mdp: &MpopSpec,
    value: &dyn ValueFn,
    policy: &PolicyFn,
    s: &[f64],
) -> Result<f64> {
    let a = policy.act(s)?;
    if !all_finite(&a) {
        return Err(Error::non_finite(format!(
            "policy '{}' output",
            policy.label()
        )));
    }
    if !mdp.is_admissible(s, &a) {
        return Err(Error::InadmissibleAction {
            step: 0,
            state: s.to_vec(),
            action: a,
        });
    }
    backup_value(mdp, value, s, &a)
}

/// Precomputed backup table for sweeps over a fixed grid and action list.
///
/// Transition, reward, and admissibility are pure, so evaluating them once
/// per (node, action) pair and interpolating through frozen stencils yields
/// exactly the same sweep arithmetic as calling [`bellman_backup`] per node.
pub(crate) struct SweepTable {
    // Per candidate: reward, then 2^d (corner index, weight) pairs.
    rewards: Vec<f64>,
    stencils: Vec<(usize, f64)>,
    corners: usize,
    // Per node: [start, end) range into `rewards`.
    ranges: Vec<(usize, usize)>,
    live: Vec<bool>,
    max_abs_reward: f64,
}

impl SweepTable {
    /// Evaluates the handles at every (node, action) pair. With
    /// `require_all_nodes`, a node without admissible actions is an error;
    /// otherwise it is marked dead.
    pub(crate) fn build(
        mdp: &MpopSpec,
        grid: &GridValueFn,
        actions: &[Vec<f64>],
        require_all_nodes: bool,
    ) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("candidate action list is empty"));
        }
        let corners = 1usize << grid.dim();
        let n = grid.node_count();
        let mut table = SweepTable {
            rewards: Vec::new(),
            stencils: Vec::new(),
            corners,
            ranges: Vec::with_capacity(n),
            live: Vec::with_capacity(n),
            max_abs_reward: 0.0,
        };
        let mut stencil = Vec::with_capacity(corners);
        for flat in 0..n {
            let s = grid.node_coord(flat);
            let start = table.rewards.len();
            for a in actions {
                if !mdp.is_admissible(&s, a) {
                    continue;
                }
                let r = mdp.reward(&s, a);
                let next = mdp.transition(&s, a);
                if !r.is_finite() {
                    return Err(Error::non_finite(format!("reward at node {s:?}")));
                }
                if !all_finite(&next) {
                    return Err(Error::non_finite(format!("transition at node {s:?}")));
                }
                grid.stencil(&next, &mut stencil);
                table.rewards.push(r);
                table.stencils.extend_from_slice(&stencil);
                table.max_abs_reward = table.max_abs_reward.max(r.abs());
            }
            let end = table.rewards.len();
            if start == end && require_all_nodes {
                return Err(Error::NoAdmissibleAction { state: s });
            }
            table.ranges.push((start, end));
            table.live.push(start != end);
        }
        Ok(table)
    }

    pub(crate) fn live(&self) -> &[bool] {
        &self.live
    }

    pub(crate) fn max_abs_reward(&self) -> f64 {
        self.max_abs_reward
    }

    /// One synchronous sweep; dead nodes keep their value. Returns the
    /// sup-norm residual over live nodes.
    pub(crate) fn sweep(&self, discount: f64, v_in: &[f64], v_out: &mut [f64]) -> f64 {
        let mut residual = 0.0f64;
        for (node, &(start, end)) in self.ranges.iter().enumerate() {
            if start == end {
                v_out[node] = v_in[node];
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for c in start..end {
                let mut interp = 0.0;
                for &(idx, w) in &self.stencils[c * self.corners..(c + 1) * self.corners] {
                    interp += w * v_in[idx];
                }
                let q = self.rewards[c] + discount * interp;
                if q > best {
                    best = q;
                }
            }
            v_out[node] = best;
            residual = residual.max((v_out[node] - v_in[node]).abs());
        }
        residual
    }
}

/// One synchronous optimal-operator sweep over the grid: every node is
/// replaced by its [`bellman_backup`] value against the previous iterate.
pub fn vi_sweep(mdp: &MpopSpec, v: &GridValueFn, actions: &[Vec<f64>]) -> Result<GridValueFn> {
    let table = SweepTable::build(mdp, v, actions, true)?;
    let mut out = vec![0.0; v.node_count()];
    table.sweep(mdp.discount(), v.values(), &mut out);
    v.with_values(out)
}

/// Synchronous value iteration from the initial iterate `v0`: sweeps until
/// the sup-node residual drops to `tol` or the sweep budget runs out (in
/// which case [`Error::NotConverged`] carries the diagnostics).
pub fn value_iterate(
    mdp: &MpopSpec,
    v0: &GridValueFn,
    actions: &[Vec<f64>],
    tol: f64,
    max_sweeps: usize,
) -> Result<(GridValueFn, ViDiagnostics)> {
    if tol <= 0.0 {
        return Err(Error::invalid("tol must be > 0"));
    }
    if max_sweeps == 0 {
        return Err(Error::invalid("max_sweeps must be >= 1"));
    }
    let table = SweepTable::build(mdp, v0, actions, true)?;
    let mut v = v0.values().to_vec();
    let mut next = v.clone();
    let mut history = Vec::new();
    for _ in 0..max_sweeps {
        let residual = table.sweep(mdp.discount(), &v, &mut next);
        history.push(residual);
        std::mem::swap(&mut v, &mut next);
        if residual <= tol {
            let diagnostics = ViDiagnostics::from_history(history, mdp.discount());
            return Ok((v0.with_values(v)?, diagnostics));
        }
    }
    Err(Error::NotConverged {
        diagnostics: ViDiagnostics::from_history(history, mdp.discount()),
    })
}

/// The greedy selector of a value function over a fixed candidate list:
/// maps each state to the best action of [`bellman_backup`], deterministic
/// given the list order.
pub fn extract_greedy(mdp: &MpopSpec, value: Arc<dyn ValueFn>, actions: &[Vec<f64>]) -> PolicyFn {
    let mdp = mdp.clone();
    let actions = actions.to_vec();
    PolicyFn::fallible("greedy", move |s| {
        bellman_backup(&mdp, value.as_ref(), s, &actions).map(|(_, a)| a)
    })
}

/// Evaluates a fixed policy on a rectangular grid by iterating its Bellman
/// operator (with multilinear interpolation between nodes) from zero until
/// the sup-node residual drops to `tol`.
pub fn evaluate_policy_on_grid(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    axes: &[Vec<f64>],
    tol: f64,
    max_sweeps: usize,
) -> Result<(GridValueFn, ViDiagnostics)> {
    if tol <= 0.0 {
        return Err(Error::invalid("tol must be > 0"));
    }
    let grid = GridValueFn::zeros(axes.to_vec())?;
    let n = grid.node_count();
    let corners = 1usize << grid.dim();
    let mut rewards = Vec::with_capacity(n);
    let mut stencils = Vec::with_capacity(n * corners);
    let mut stencil = Vec::with_capacity(corners);
    for flat in 0..n {
        let s = grid.node_coord(flat);
        let a = policy.act(&s)?;
        if !mdp.is_admissible(&s, &a) {
            return Err(Error::InadmissibleAction {
                step: 0,
                state: s,
                action: a,
            });
        }
        let r = mdp.reward(&s, &a);
        let next = mdp.transition(&s, &a);
        if !r.is_finite() || !all_finite(&next) {
            return Err(Error::non_finite(format!("policy backup at node {s:?}")));
        }
        grid.stencil(&next, &mut stencil);
        rewards.push(r);
        stencils.extend_from_slice(&stencil);
    }
    let mut v = vec![0.0f64; n];
    let mut next = v.clone();
    let mut history = Vec::new();
    for _ in 0..max_sweeps {
        let mut residual = 0.0f64;
        for node in 0..n {
            let mut interp = 0.0;
            for &(idx, w) in &stencils[node * corners..(node + 1) * corners] {
                interp += w * v[idx];
            }
            next[node] = rewards[node] + mdp.discount() * interp;
            residual = residual.max((next[node] - v[node]).abs());
        }
        history.push(residual);
        std::mem::swap(&mut v, &mut next);
        if residual <= tol {
            let diagnostics = ViDiagnostics::from_history(history, mdp.discount());
            return Ok((grid.with_values(v)?, diagnostics));
        }
    }
    Err(Error::NotConverged {
        diagnostics: ViDiagnostics::from_history(history, mdp.discount()),
    })
}

/// One policy improvement step: evaluates the policy on the grid to
/// tolerance `eval_tol`, then returns the greedy policy with respect to that
/// value function. A single step only; iterating further has no general
/// guarantee for these problems.
pub fn policy_improve(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    axes: &[Vec<f64>],
    actions: &[Vec<f64>],
    eval_tol: f64,
) -> Result<PolicyFn> {
    let (value, _) = evaluate_policy_on_grid(mdp, policy, axes, eval_tol, POLICY_EVAL_MAX_SWEEPS)?;
    Ok(extract_greedy(mdp, Arc::new(value), actions))
}

/// The nearest admissible candidate to `a` in Euclidean distance, together
/// with that distance; ties break toward the lowest list index.
pub fn nearest_admissible(
    mdp: &MpopSpec,
    s: &[f64],
    a: &[f64],
    candidates: &[Vec<f64>],
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, cand) in candidates.iter().enumerate() {
        if !mdp.is_admissible(s, cand) {
            continue;
        }
        let d = cand
            .iter()
            .zip(a)
            .map(|(c, a)| (c - a) * (c - a))
            .sum::<f64>()
            .sqrt();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, i));
        }
    }
    match best {
        Some((d, i)) => Ok((candidates[i].clone(), d)),
        None => Err(Error::NoAdmissibleAction { state: s.to_vec() }),
    }
}
