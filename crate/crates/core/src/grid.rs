//! Rectangular-grid value functions with multilinear interpolation, action
//! grids over box hulls, and the discounted-state-distribution sampler.
//!
//! Interpolation weights are convex (nonnegative, summing to one), which is
//! what makes the Bellman sweep a genuine sup-norm contraction on grid
//! vectors; see the properties tested in `tests/properties.rs`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MpopSpec, PolicyFn, SweepTable, ViDiagnostics};
use crate::restriction::BoxRegion;

/// Hard cap on grid dimensionality; keeps interpolation buffers on the stack.
pub const MAX_GRID_DIM: usize = 8;

/// Behavior of [`GridValueFn::eval`] for query points outside the grid hull.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutOfRange {
    /// Project the query onto the nearest boundary point (default).
    #[default]
    Clamp,
    /// Return NaN so downstream finiteness checks flag the query.
    Reject,
}

/// A real-valued function on a rectangular grid, evaluated by multilinear
/// interpolation within cells and clamped (or rejected) outside.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawGridValueFn")]
pub struct GridValueFn {
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
    out_of_range: OutOfRange,
    #[serde(skip)]
    strides: Vec<usize>,
}

#[derive(Deserialize)]
struct RawGridValueFn {
    axes: Vec<Vec<f64>>,
    values: Vec<f64>,
    #[serde(default)]
    out_of_range: OutOfRange,
}

impl TryFrom<RawGridValueFn> for GridValueFn {
    type Error = Error;

    fn try_from(raw: RawGridValueFn) -> Result<Self> {
        GridValueFn::new(raw.axes, raw.values, raw.out_of_range)
    }
}

fn check_axes(axes: &[Vec<f64>]) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::invalid("grid needs at least one axis"));
    }
    if axes.len() > MAX_GRID_DIM {
        return Err(Error::invalid(format!(
            "grid dimension {} exceeds the supported maximum {MAX_GRID_DIM}",
            axes.len()
        )));
    }
    for (k, axis) in axes.iter().enumerate() {
        if axis.len() < 2 {
            return Err(Error::invalid(format!("axis {k} needs at least 2 nodes")));
        }
        if axis.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("axis {k} has non-finite nodes")));
        }
        if axis.windows(2).any(|pair| pair[0] >= pair[1]) {
            return Err(Error::invalid(format!(
                "axis {k} is not strictly increasing"
            )));
        }
    }
    Ok(())
}

fn row_major_strides(axes: &[Vec<f64>]) -> Vec<usize> {
    let d = axes.len();
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * axes[k + 1].len();
    }
    strides
}

impl GridValueFn {
    /// Builds a grid function from per-dimension node coordinates and a flat
    /// row-major value table (last axis fastest).
    pub fn new(axes: Vec<Vec<f64>>, values: Vec<f64>, out_of_range: OutOfRange) -> Result<Self> {
        check_axes(&axes)?;
        let expected: usize = axes.iter().map(Vec::len).product();
        if values.len() != expected {
            return Err(Error::invalid(format!(
                "value table has {} entries, grid has {expected} nodes",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("grid value table"));
        }
        let strides = row_major_strides(&axes);
        Ok(Self {
            axes,
            values,
            out_of_range,
            strides,
        })
    }

    /// Grid with every node set to `c`.
    pub fn constant(axes: Vec<Vec<f64>>, c: f64) -> Result<Self> {
        check_axes(&axes)?;
        let n: usize = axes.iter().map(Vec::len).product();
        Self::new(axes, vec![c; n], OutOfRange::Clamp)
    }

    pub fn zeros(axes: Vec<Vec<f64>>) -> Result<Self> {
        Self::constant(axes, 0.0)
    }

    /// Same axes and policy, new value table.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.axes.clone(), values, self.out_of_range)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn out_of_range(&self) -> OutOfRange {
        self.out_of_range
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    /// Coordinates of the node with the given flat row-major index.
    pub fn node_coord(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut coord = Vec::with_capacity(self.dim());
        for (axis, stride) in self.axes.iter().zip(&self.strides) {
            let i = rem / stride;
            rem %= stride;
            coord.push(axis[i]);
        }
        coord
    }

    pub fn set_value(&mut self, flat: usize, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::non_finite("grid value update"));
        }
        self.values[flat] = v;
        Ok(())
    }

    /// True if `x` lies inside the grid's bounding hull (componentwise).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .axes
                .iter()
                .zip(x)
                .all(|(axis, &xi)| xi >= axis[0] && xi <= *axis.last().unwrap())
    }

    fn locate(axis: &[f64], x: f64) -> (usize, f64) {
        let lo = axis[0];
        let hi = *axis.last().unwrap();
        let xc = x.clamp(lo, hi);
        // Largest cell index j (<= len-2) with axis[j] <= xc.
        let upper = axis.partition_point(|v| *v <= xc);
        let base = upper.saturating_sub(1).min(axis.len() - 2);
        let w = (xc - axis[base]) / (axis[base + 1] - axis[base]);
        (base, w.clamp(0.0, 1.0))
    }

    /// Multilinear interpolation; a convex combination of the 2^d cell
    /// corner values. Stored node values are reproduced exactly.
    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "query dimension mismatch");
        if self.out_of_range == OutOfRange::Reject && !self.contains(x) {
            return f64::NAN;
        }
        let d = self.dim();
        let mut base = [0usize; MAX_GRID_DIM];
        let mut weight = [0f64; MAX_GRID_DIM];
        for k in 0..d {
            let (b, w) = Self::locate(&self.axes[k], x[k]);
            base[k] = b;
            weight[k] = w;
        }
        let mut acc = 0.0;
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    w *= weight[k];
                    idx += (base[k] + 1) * self.strides[k];
                } else {
                    w *= 1.0 - weight[k];
                    idx += base[k] * self.strides[k];
                }
            }
            acc += w * self.values[idx];
        }
        acc
    }

    /// Corner indices and convex weights used by [`GridValueFn::eval`] at
    /// `x`, in the same order `eval` accumulates them.
    pub(crate) fn stencil(&self, x: &[f64], out: &mut Vec<(usize, f64)>) {
        out.clear();
        let d = self.dim();
        let mut basev = [0usize; MAX_GRID_DIM];
        let mut weight = [0f64; MAX_GRID_DIM];
        for k in 0..d {
            let (b, w) = Self::locate(&self.axes[k], x[k]);
            basev[k] = b;
            weight[k] = w;
        }
        for mask in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    w *= weight[k];
                    idx += (basev[k] + 1) * self.strides[k];
                } else {
                    w *= 1.0 - weight[k];
                    idx += basev[k] * self.strides[k];
                }
            }
            out.push((idx, w));
        }
    }

    /// Writes `x0,..,x{d-1},value` rows, one per node, in flat row-major
    /// order, with a header row.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for k in 0..self.dim() {
            write!(w, "x{k},")?;
        }
        writeln!(w, "value")?;
        for flat in 0..self.node_count() {
            for c in self.node_coord(flat) {
                write!(w, "{c},")?;
            }
            writeln!(w, "{}", self.values[flat])?;
        }
        Ok(())
    }
}

/// Free-function form of [`GridValueFn::eval`].
pub fn grid_eval(v: &GridValueFn, x: &[f64]) -> f64 {
    v.eval(x)
}

/// A finite set of actions laid out on a rectangular grid inside a hull box,
/// flattened in row-major order (last axis fastest).
#[derive(Debug, Clone)]
pub struct ActionGrid {
    axes: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

impl ActionGrid {
    pub fn from_axes(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("action grid needs at least one axis"));
        }
        for (k, axis) in axes.iter().enumerate() {
            if axis.is_empty() {
                return Err(Error::invalid(format!("action axis {k} is empty")));
            }
            if axis.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("action axis {k} has non-finite nodes")));
            }
            if axis.windows(2).any(|pair| pair[0] >= pair[1]) {
                return Err(Error::invalid(format!(
                    "action axis {k} is not strictly increasing"
                )));
            }
        }
        let mut actions = Vec::new();
        let mut idx = vec![0usize; axes.len()];
        loop {
            actions.push(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect());
            // Row-major increment: last axis fastest.
            let mut k = axes.len();
            loop {
                if k == 0 {
                    return Ok(Self { axes, actions });
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Uniform grid over the hull box with the given node count per
    /// dimension. A single node lands on the interval midpoint.
    pub fn uniform(hull: &BoxRegion, points_per_dim: &[usize]) -> Result<Self> {
        if points_per_dim.len() != hull.dim() {
            return Err(Error::invalid("points_per_dim length must match hull dim"));
        }
        let mut axes = Vec::with_capacity(hull.dim());
        for (k, &n) in points_per_dim.iter().enumerate() {
            if n == 0 {
                return Err(Error::invalid("points_per_dim entries must be >= 1"));
            }
            let (lo, hi) = (hull.lo()[k], hull.hi()[k]);
            let axis = if n == 1 || lo == hi {
                vec![0.5 * (lo + hi)]
            } else {
                let mut axis: Vec<f64> = (0..n)
                    .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                    .collect();
                axis[n - 1] = hi;
                axis
            };
            axes.push(axis);
        }
        Self::from_axes(axes)
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn actions(&self) -> &[Vec<f64>] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Value iteration bound to a [`GridValueFn`] iterate; a thin wrapper over
/// [`crate::mdp::value_iterate`] with identical contract and diagnostics.
pub fn vi_on_grid(
    mdp: &MpopSpec,
    grid: &GridValueFn,
    actions: &ActionGrid,
    tol: f64,
    max_sweeps: usize,
) -> Result<(GridValueFn, ViDiagnostics)> {
    crate::mdp::value_iterate(mdp, grid, actions.actions(), tol, max_sweeps)
}

/// How to pin nodes that have no admissible action in
/// [`vi_on_grid_masked`].
#[derive(Debug, Clone, Copy)]
pub enum MaskFill {
    /// Pin dead nodes to -M/(1-gamma), with M the largest absolute reward
    /// seen over live node/action pairs; a lower bound on any value.
    RewardLowerBound,
    /// Pin dead nodes to an explicit value.
    Value(f64),
}

/// Result of a masked value-iteration run.
#[derive(Debug, Clone)]
pub struct MaskedVi {
    pub value: GridValueFn,
    pub diagnostics: ViDiagnostics,
    /// Per-node flag: true where at least one action was admissible.
    pub live: Vec<bool>,
    pub dead_count: usize,
    pub fill_value: f64,
    /// Largest |reward| over live node/action pairs.
    pub reward_bound: f64,
}

/// Value iteration over a grid whose hull may extend beyond the restricted
/// state set. Nodes with no admissible action are pinned to a fill value and
/// excluded from sweeps and residuals; live nodes follow the ordinary
/// synchronous backup. Errors if every node is dead.
pub fn vi_on_grid_masked(
    mdp: &MpopSpec,
    grid: &GridValueFn,
    actions: &ActionGrid,
    tol: f64,
    max_sweeps: usize,
    fill: MaskFill,
) -> Result<MaskedVi> {
    if tol <= 0.0 {
        return Err(Error::invalid("tol must be > 0"));
    }
    if max_sweeps == 0 {
        return Err(Error::invalid("max_sweeps must be >= 1"));
    }
    let table = SweepTable::build(mdp, grid, actions.actions(), false)?;
    let live = table.live().to_vec();
    let dead_count = live.iter().filter(|l| !**l).count();
    if dead_count == live.len() {
        return Err(Error::NoAdmissibleAction {
            state: grid.node_coord(0),
        });
    }
    let reward_bound = table.max_abs_reward();
    let fill_value = match fill {
        MaskFill::Value(v) => v,
        MaskFill::RewardLowerBound => -reward_bound / (1.0 - mdp.discount()),
    };
    let mut v = grid.values().to_vec();
    for (i, alive) in live.iter().enumerate() {
        if !alive {
            v[i] = fill_value;
        }
    }
    let mut next = v.clone();
    let mut history = Vec::new();
    for _ in 0..max_sweeps {
        let residual = table.sweep(mdp.discount(), &v, &mut next);
        history.push(residual);
        std::mem::swap(&mut v, &mut next);
        if residual <= tol {
            return Ok(MaskedVi {
                value: grid.with_values(v)?,
                diagnostics: ViDiagnostics::from_history(history, mdp.discount()),
                live,
                dead_count,
                fill_value,
                reward_bound,
            });
        }
    }
    Err(Error::NotConverged {
        diagnostics: ViDiagnostics::from_history(history, mdp.discount()),
    })
}

/// Draws a state from the discounted state distribution of `policy`: a
/// horizon T ~ Geometric(1 - discount) counting failures before the first
/// success (support includes 0), then a T-step rollout from a sampled
/// initial state.
pub fn sample_discounted_state<R: Rng + ?Sized>(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    initial_sampler: impl Fn(&mut R) -> Vec<f64>,
    discount: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::invalid("discount must lie in [0, 1)"));
    }
    let mut horizon = 0usize;
    while rng.gen::<f64>() < discount {
        horizon += 1;
    }
    let mut state = initial_sampler(rng);
    for step in 0..horizon {
        state = crate::mdp::policy_step(mdp, policy, &state, step)?.0;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MpopSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_1d() -> GridValueFn {
        GridValueFn::new(vec![vec![0.0, 1.0]], vec![0.0, 10.0], OutOfRange::Clamp).unwrap()
    }

    #[test]
    fn eval_at_nodes_is_exact() {
        let axes = vec![vec![-1.0, 0.0, 2.0], vec![0.0, 0.5]];
        let values: Vec<f64> = (0..6).map(|i| i as f64 * 1.5 - 2.0).collect();
        let g = GridValueFn::new(axes, values.clone(), OutOfRange::Clamp).unwrap();
        for flat in 0..g.node_count() {
            let x = g.node_coord(flat);
            assert_eq!(g.eval(&x), values[flat]);
        }
    }

    #[test]
    fn linear_interpolation_1d() {
        let g = grid_1d();
        assert_eq!(g.eval(&[0.25]), 2.5);
    }

    #[test]
    fn bilinear_center_is_corner_mean() {
        let g = GridValueFn::new(
            vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            vec![0.0, 1.0, 2.0, 3.0],
            OutOfRange::Clamp,
        )
        .unwrap();
        assert!((g.eval(&[0.5, 0.5]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn clamping_projects_to_boundary() {
        let g = grid_1d();
        assert_eq!(g.eval(&[-3.0]), g.eval(&[0.0]));
        assert_eq!(g.eval(&[7.0]), g.eval(&[1.0]));
    }

    #[test]
    fn reject_policy_returns_nan_outside() {
        let g = GridValueFn::new(vec![vec![0.0, 1.0]], vec![0.0, 1.0], OutOfRange::Reject).unwrap();
        assert!(g.eval(&[1.5]).is_nan());
        assert!(!g.eval(&[0.5]).is_nan());
    }

    #[test]
    fn invalid_axes_rejected() {
        assert!(GridValueFn::new(vec![vec![0.0, 0.0]], vec![0.0, 0.0], OutOfRange::Clamp).is_err());
        assert!(GridValueFn::new(vec![vec![1.0]], vec![0.0], OutOfRange::Clamp).is_err());
        assert!(
            GridValueFn::new(vec![vec![0.0, 1.0]], vec![f64::NAN, 0.0], OutOfRange::Clamp).is_err()
        );
    }

    #[test]
    fn action_grid_row_major_order() {
        let g = ActionGrid::from_axes(vec![vec![0.0, 1.0], vec![10.0, 20.0]]).unwrap();
        let acts: Vec<Vec<f64>> = g.actions().to_vec();
        assert_eq!(
            acts,
            vec![
                vec![0.0, 10.0],
                vec![0.0, 20.0],
                vec![1.0, 10.0],
                vec![1.0, 20.0]
            ]
        );
    }

    #[test]
    fn uniform_action_grid_stays_in_hull() {
        let hull = BoxRegion::new(vec![-2.0, 0.0], vec![3.0, 1.0]).unwrap();
        let g = ActionGrid::uniform(&hull, &[7, 5]).unwrap();
        for a in g.actions() {
            assert!(hull.contains(a));
        }
        assert_eq!(g.len(), 35);
        assert_eq!(*g.axes()[0].last().unwrap(), 3.0);
    }

    #[test]
    fn serde_round_trip_rebuilds_strides() {
        let g = GridValueFn::new(
            vec![vec![0.0, 1.0], vec![0.0, 1.0, 2.0]],
            (0..6).map(|i| i as f64).collect(),
            OutOfRange::Clamp,
        )
        .unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: GridValueFn = serde_json::from_str(&json).unwrap();
        assert_eq!(back.eval(&[0.5, 1.5]), g.eval(&[0.5, 1.5]));
    }

    fn counter_mdp(discount: f64) -> MpopSpec {
        MpopSpec::new(
            1,
            1,
            discount,
            |s: &[f64], _a: &[f64]| vec![s[0] + 1.0],
            |_s: &[f64], _a: &[f64]| 0.0,
            |_s: &[f64], _a: &[f64]| true,
        )
        .unwrap()
    }

    fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        v[n - 1] = hi;
        v
    }

    #[test]
    fn masked_vi_pins_dead_nodes_and_converges_live_ones() {
        // Restriction of the tanh benchmark evaluated on a grid stretching
        // past the state set: a node can reach [-1, 1] only when
        // |s| <= 1 + tanh(1); farther nodes are dead.
        let mdp = crate::running_example::restricted(0.9).unwrap().to_mpop();
        let grid = GridValueFn::zeros(vec![linspace(-3.0, 3.0, 25)]).unwrap();
        let actions = ActionGrid::from_axes(vec![linspace(-1.0, 1.0, 11)]).unwrap();
        let masked = vi_on_grid_masked(&mdp, &grid, &actions, 1e-8, 2000, MaskFill::RewardLowerBound)
            .unwrap();
        assert!(masked.dead_count > 0);
        assert!(masked.live.iter().any(|l| *l));
        assert!(masked.fill_value < -10.0);
        let reach = 1.0 + 1.0f64.tanh();
        for (i, alive) in masked.live.iter().enumerate() {
            let s = masked.value.node_coord(i)[0];
            assert_eq!(*alive, s.abs() <= reach, "node at {s}");
            if !alive {
                assert_eq!(masked.value.values()[i], masked.fill_value);
            }
        }
        assert!(masked.diagnostics.final_residual <= 1e-8);
    }

    #[test]
    fn masked_vi_with_explicit_fill_value() {
        let mdp = crate::running_example::restricted(0.9).unwrap().to_mpop();
        let grid = GridValueFn::zeros(vec![linspace(-3.0, 3.0, 25)]).unwrap();
        let actions = ActionGrid::from_axes(vec![linspace(-1.0, 1.0, 11)]).unwrap();
        let masked =
            vi_on_grid_masked(&mdp, &grid, &actions, 1e-8, 2000, MaskFill::Value(-7.0)).unwrap();
        assert_eq!(masked.fill_value, -7.0);
    }

    #[test]
    fn masked_vi_errors_when_every_node_is_dead() {
        let mdp = MpopSpec::new(
            1,
            1,
            0.9,
            |s: &[f64], _a: &[f64]| s.to_vec(),
            |_s: &[f64], _a: &[f64]| 0.0,
            |_s: &[f64], _a: &[f64]| false,
        )
        .unwrap();
        let grid = GridValueFn::zeros(vec![linspace(0.0, 1.0, 5)]).unwrap();
        let actions = ActionGrid::from_axes(vec![vec![0.0]]).unwrap();
        let err =
            vi_on_grid_masked(&mdp, &grid, &actions, 1e-8, 10, MaskFill::RewardLowerBound)
                .unwrap_err();
        assert!(matches!(err, crate::error::Error::NoAdmissibleAction { .. }));
    }

    #[test]
    fn discounted_sampler_zero_discount_returns_initial() {
        let mdp = counter_mdp(0.0);
        let policy = PolicyFn::new("zero", |_s| vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = sample_discounted_state(&mdp, &policy, |_r| vec![5.0], 0.0, &mut rng).unwrap();
            assert_eq!(s, vec![5.0]);
        }
    }

    #[test]
    fn discounted_sampler_mean_horizon() {
        // Counter dynamics: the endpoint state equals the drawn horizon.
        let mdp = counter_mdp(0.9);
        let policy = PolicyFn::new("zero", |_s| vec![0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum +=
                sample_discounted_state(&mdp, &policy, |_r| vec![0.0], 0.9, &mut rng).unwrap()[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 9.0).abs() < 0.15, "mean horizon {mean}");
    }
}
