//! Finite deterministic MDPs encoded over integer-indexed states and
//! actions, with an exhaustive policy-enumeration solver.
//!
//! The enumeration path evaluates each stationary deterministic policy by
//! solving its closed-loop linear recursion directly, never through the
//! Bellman operators, so it serves as an independent reference for the
//! value-iteration machinery.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::GridValueFn;
use crate::mdp::MpopSpec;

/// A finite deterministic MDP: `next[s][a]` and `reward[s][a]` tables.
#[derive(Debug, Clone)]
pub struct TabularMpop {
    next: Vec<Vec<usize>>,
    reward: Vec<Vec<f64>>,
    discount: f64,
}

impl TabularMpop {
    pub fn new(next: Vec<Vec<usize>>, reward: Vec<Vec<f64>>, discount: f64) -> Result<Self> {
        if next.is_empty() || next.len() != reward.len() {
            return Err(Error::invalid("tables must be nonempty and equal-length"));
        }
        let n_actions = next[0].len();
        if n_actions == 0 {
            return Err(Error::invalid("need at least one action"));
        }
        let n_states = next.len();
        for (row_n, row_r) in next.iter().zip(&reward) {
            if row_n.len() != n_actions || row_r.len() != n_actions {
                return Err(Error::invalid("ragged transition/reward tables"));
            }
            if row_n.iter().any(|&s| s >= n_states) {
                return Err(Error::invalid("transition target out of range"));
            }
            if row_r.iter().any(|r| !r.is_finite()) {
                return Err(Error::non_finite("tabular reward table"));
            }
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid("discount must lie in [0, 1)"));
        }
        Ok(Self {
            next,
            reward,
            discount,
        })
    }

    /// Uniform random rewards in [-1, 1] and uniform random successor
    /// states, from a fixed seed.
    pub fn random(n_states: usize, n_actions: usize, discount: f64, seed: u64) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("need at least one state and action"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let next = (0..n_states)
            .map(|_| (0..n_actions).map(|_| rng.gen_range(0..n_states)).collect())
            .collect();
        let reward = (0..n_states)
            .map(|_| {
                (0..n_actions)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        Self::new(next, reward, discount)
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Exact value of a deterministic stationary policy (one action index
    /// per state), by solving `(I - discount P) V = r` for the closed-loop
    /// recursion.
    pub fn policy_value(&self, policy: &[usize]) -> Result<Vec<f64>> {
        let n = self.n_states();
        if policy.len() != n || policy.iter().any(|&a| a >= self.n_actions()) {
            return Err(Error::invalid("policy must assign a valid action per state"));
        }
        let mut system = DMatrix::<f64>::identity(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for s in 0..n {
            let a = policy[s];
            system[(s, self.next[s][a])] -= self.discount;
            rhs[s] = self.reward[s][a];
        }
        let solution = system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::invalid("closed-loop system is singular"))?;
        Ok(solution.as_slice().to_vec())
    }

    /// Componentwise-best value over every deterministic stationary policy,
    /// together with a policy attaining it (brute force; feasible only at
    /// desk scale).
    pub fn enumerate_optimal(&self) -> Result<(Vec<f64>, Vec<usize>)> {
        let n = self.n_states();
        let m = self.n_actions();
        let total = (m as f64).powi(n as i32);
        if total > 5e6 {
            return Err(Error::invalid(format!(
                "enumeration would visit {total:.0} policies; shrink the problem"
            )));
        }
        let mut best_value = vec![f64::NEG_INFINITY; n];
        let mut best_sum = f64::NEG_INFINITY;
        let mut best_policy = vec![0usize; n];
        let mut assignment = vec![0usize; n];
        loop {
            let value = self.policy_value(&assignment)?;
            // An optimal stationary policy attains the componentwise max, so
            // the max-sum policy is a valid witness for it.
            let sum: f64 = value.iter().sum();
            if sum > best_sum {
                best_sum = sum;
                best_policy = assignment.clone();
            }
            for (b, v) in best_value.iter_mut().zip(&value) {
                if *v > *b {
                    *b = *v;
                }
            }
            // Multi-radix increment over action assignments.
            let mut k = 0;
            loop {
                if k == n {
                    return Ok((best_value, best_policy));
                }
                assignment[k] += 1;
                if assignment[k] < m {
                    break;
                }
                assignment[k] = 0;
                k += 1;
            }
        }
    }

    /// The same MDP as a metric problem over integer-coded 1-D states and
    /// actions.
    pub fn to_mpop(&self) -> MpopSpec {
        let next = self.next.clone();
        let reward = self.reward.clone();
        let n_states = self.n_states();
        let n_actions = self.n_actions();
        let decode = move |v: f64, n: usize| -> Option<usize> {
            let i = v.round();
            if i >= 0.0 && (i as usize) < n {
                Some(i as usize)
            } else {
                None
            }
        };
        let next_t = next.clone();
        let decode_t = decode;
        MpopSpec::new(
            1,
            1,
            self.discount,
            move |s: &[f64], a: &[f64]| {
                match (decode_t(s[0], n_states), decode_t(a[0], n_actions)) {
                    (Some(si), Some(ai)) => vec![next_t[si][ai] as f64],
                    _ => vec![f64::NAN],
                }
            },
            move |s: &[f64], a: &[f64]| {
                match (decode(s[0], n_states), decode(a[0], n_actions)) {
                    (Some(si), Some(ai)) => reward[si][ai],
                    _ => f64::NAN,
                }
            },
            move |s: &[f64], a: &[f64]| {
                decode(s[0], n_states).is_some() && decode(a[0], n_actions).is_some()
            },
        )
        .expect("validated discount")
    }

    /// State grid whose nodes are exactly the integer state codes, so the
    /// interpolated iterate is exact on the encoded problem.
    pub fn state_grid(&self) -> Result<GridValueFn> {
        let axis: Vec<f64> = (0..self.n_states()).map(|s| s as f64).collect();
        GridValueFn::zeros(vec![axis])
    }

    /// Action list in index order.
    pub fn action_list(&self) -> Vec<Vec<f64>> {
        (0..self.n_actions()).map(|a| vec![a as f64]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{extract_greedy, policy_backup, value_iterate, PolicyFn, ValueFn};
    use std::sync::Arc;

    #[test]
    fn policy_value_solves_two_state_chain() {
        // State 0 loops with reward 1; state 1 moves to 0 with reward 0.
        let t = TabularMpop::new(
            vec![vec![0], vec![0]],
            vec![vec![1.0], vec![0.0]],
            0.5,
        )
        .unwrap();
        let v = t.policy_value(&[0, 0]).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn enumeration_matches_value_iteration() {
        for seed in 0..10 {
            let t = TabularMpop::random(4, 3, 0.9, seed).unwrap();
            let (vstar, policy) = t.enumerate_optimal().unwrap();
            let mdp = t.to_mpop();
            let (v, _) = value_iterate(&mdp, &t.state_grid().unwrap(), &t.action_list(), 1e-12, 20_000)
                .unwrap();
            for s in 0..t.n_states() {
                assert!(
                    (v.values()[s] - vstar[s]).abs() < 1e-9,
                    "seed {seed} state {s}: vi {} enum {}",
                    v.values()[s],
                    vstar[s]
                );
            }
            // The witness policy's exact value matches the optimum too.
            let vw = t.policy_value(&policy).unwrap();
            for s in 0..t.n_states() {
                assert!((vw[s] - vstar[s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tabular_residuals_decay_geometrically_without_slack() {
        let t = TabularMpop::random(5, 3, 0.9, 77).unwrap();
        let mdp = t.to_mpop();
        let (_, diag) =
            value_iterate(&mdp, &t.state_grid().unwrap(), &t.action_list(), 1e-11, 20_000).unwrap();
        for w in diag.residual_history.windows(2) {
            assert!(w[1] <= 0.9 * w[0] + 1e-12, "{} vs {}", w[1], w[0]);
        }
    }

    #[test]
    fn greedy_policy_is_enumeration_optimal() {
        let t = TabularMpop::random(4, 3, 0.5, 5).unwrap();
        let (vstar, _) = t.enumerate_optimal().unwrap();
        let mdp = t.to_mpop();
        let (v, _) = value_iterate(&mdp, &t.state_grid().unwrap(), &t.action_list(), 1e-12, 20_000)
            .unwrap();
        let greedy = extract_greedy(&mdp, Arc::new(v), &t.action_list());
        let mut indices = Vec::new();
        for s in 0..t.n_states() {
            let a = greedy.act(&[s as f64]).unwrap();
            indices.push(a[0].round() as usize);
        }
        let vg = t.policy_value(&indices).unwrap();
        for s in 0..t.n_states() {
            assert!((vg[s] - vstar[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn one_improvement_step_never_worsens_values() {
        for seed in [3, 14, 159] {
            let t = TabularMpop::random(4, 3, 0.9, seed).unwrap();
            let mdp = t.to_mpop();
            let base = PolicyFn::new("first-action", |_s: &[f64]| vec![0.0]);
            let axes: Vec<Vec<f64>> = vec![(0..4).map(|s| s as f64).collect()];
            let improved =
                crate::mdp::policy_improve(&mdp, &base, &axes, &t.action_list(), 1e-12).unwrap();
            let v_base = t.policy_value(&[0, 0, 0, 0]).unwrap();
            let mut improved_indices = Vec::new();
            for s in 0..4 {
                improved_indices.push(improved.act(&[s as f64]).unwrap()[0].round() as usize);
            }
            let v_improved = t.policy_value(&improved_indices).unwrap();
            for s in 0..4 {
                assert!(
                    v_improved[s] >= v_base[s] - 1e-10,
                    "seed {seed} state {s}: {} < {}",
                    v_improved[s],
                    v_base[s]
                );
            }
        }
    }

    #[test]
    fn greedy_rollout_matches_converged_value() {
        let t = TabularMpop::random(5, 4, 0.9, 21).unwrap();
        let mdp = t.to_mpop();
        let tol = 1e-10;
        let (v, _) = value_iterate(&mdp, &t.state_grid().unwrap(), &t.action_list(), tol, 50_000)
            .unwrap();
        let v = Arc::new(v);
        let greedy = extract_greedy(&mdp, v.clone(), &t.action_list());
        let horizon = 200;
        let m = 1.0; // rewards drawn from [-1, 1]
        let bound = 0.9f64.powi(horizon as i32) * m / 0.1 + (1.9 / 0.1) * tol;
        for s in 0..5 {
            let r = crate::mdp::rollout_return(&mdp, &greedy, &[s as f64], horizon).unwrap();
            let diff = (r - v.value(&[s as f64])).abs();
            assert!(diff <= bound, "state {s}: diff {diff} > bound {bound}");
        }
    }

    #[test]
    fn greedy_backup_consistency_on_tabular_problem() {
        let t = TabularMpop::random(3, 2, 0.5, 8).unwrap();
        let mdp = t.to_mpop();
        let (v, _) = value_iterate(&mdp, &t.state_grid().unwrap(), &t.action_list(), 1e-11, 10_000)
            .unwrap();
        let v = Arc::new(v);
        let greedy = extract_greedy(&mdp, v.clone(), &t.action_list());
        for s in 0..3 {
            let state = [s as f64];
            let (bv, _) =
                crate::mdp::bellman_backup(&mdp, v.as_ref(), &state, &t.action_list()).unwrap();
            let pv = policy_backup(&mdp, v.as_ref(), &greedy, &state).unwrap();
            assert_eq!(bv, pv);
        }
    }
}
