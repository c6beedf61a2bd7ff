//! Compact state sets with decidable membership, the compact-restriction
//! constructor, and sampling-based invariance / nonemptiness certification.
//!
//! A restriction replaces an MDP's admissibility rule with the derived
//! filter "action inside a compact hull, successor state inside the compact
//! set". When the supplied policies keep the set forward-invariant, every
//! state of the set keeps a nonempty admissible action set, which is what
//! makes value iteration on the restricted problem well posed.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MpopSpec, PolicyFn};

/// Relative hull inflation applied by [`build_action_hull`] callers that do
/// not want to pick their own slack.
pub const DEFAULT_HULL_SLACK: f64 = 0.01;

/// Attempt budget multiplier for rejection sampling of set members.
const REJECTION_BUDGET_FACTOR: usize = 100;

/// An axis-aligned box `[lo, hi]` (closed on both sides).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBoxRegion")]
pub struct BoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBoxRegion> for BoxRegion {
    type Error = Error;

    fn try_from(raw: RawBoxRegion) -> Result<Self> {
        BoxRegion::new(raw.lo, raw.hi)
    }
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::invalid("box bounds must be nonempty and equal-length"));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(Error::invalid("box needs finite lo <= hi componentwise"));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The symmetric box `[-half_width, half_width]^d`.
    pub fn symmetric(half_width: f64, dim: usize) -> Result<Self> {
        Self::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Euclidean distance from `x` to the box; 0 inside.
    pub fn distance_outside(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| {
                let excess = (l - v).max(v - h).max(0.0);
                excess * excess
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Box grown by `extra` on every side.
    pub fn inflated(&self, extra: f64) -> Result<Self> {
        Self::new(
            self.lo.iter().map(|l| l - extra).collect(),
            self.hi.iter().map(|h| h + extra).collect(),
        )
    }

    /// Box with each half-width scaled by `1 + slack`; degenerate axes stay
    /// degenerate.
    pub fn inflated_relative(&self, slack: f64) -> Result<Self> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for (l, h) in self.lo.iter().zip(&self.hi) {
            let center = 0.5 * (l + h);
            let half = 0.5 * (h - l) * (1.0 + slack);
            lo.push(center - half);
            hi.push(center + half);
        }
        Self::new(lo, hi)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + rng.gen::<f64>() * (h - l))
            .collect()
    }
}

/// Uniform-cell spatial hash over a flat point list; supports bounded-radius
/// membership probes and nearest-distance queries.
#[derive(Debug, Clone)]
struct PointIndex {
    cell: f64,
    map: HashMap<Vec<i64>, Vec<u32>>,
    max_ring: i64,
}

fn cell_key(x: &[f64], cell: f64) -> Vec<i64> {
    x.iter().map(|v| (v / cell).floor() as i64).collect()
}

/// Visits every integer offset in `[-k, k]^d`.
fn for_each_offset(dim: usize, k: i64, mut f: impl FnMut(&[i64]) -> bool) {
    let mut offset = vec![-k; dim];
    loop {
        if f(&offset) {
            return;
        }
        let mut axis = dim;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            offset[axis] += 1;
            if offset[axis] <= k {
                break;
            }
            offset[axis] = -k;
        }
    }
}

impl PointIndex {
    fn build(points: &[f64], dim: usize, cell: f64) -> Self {
        let n = points.len() / dim;
        let mut map: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        let mut min_key = vec![i64::MAX; dim];
        let mut max_key = vec![i64::MIN; dim];
        for i in 0..n {
            let p = &points[i * dim..(i + 1) * dim];
            let key = cell_key(p, cell);
            for (d, &k) in key.iter().enumerate() {
                min_key[d] = min_key[d].min(k);
                max_key[d] = max_key[d].max(k);
            }
            map.entry(key).or_default().push(i as u32);
        }
        let max_ring = min_key
            .iter()
            .zip(&max_key)
            .map(|(a, b)| b - a)
            .max()
            .unwrap_or(0)
            + 1;
        Self {
            cell,
            map,
            max_ring,
        }
    }

    fn scan_cell(
        &self,
        key: &[i64],
        x: &[f64],
        points: &[f64],
        dim: usize,
        mut visit: impl FnMut(f64) -> bool,
    ) -> bool {
        if let Some(ids) = self.map.get(key) {
            for &i in ids {
                let p = &points[i as usize * dim..(i as usize + 1) * dim];
                let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if visit(d2.sqrt()) {
                    return true;
                }
            }
        }
        false
    }

    /// True if any point lies within `radius` of `x`.
    fn any_within(&self, x: &[f64], radius: f64, points: &[f64], dim: usize) -> bool {
        let k = (radius / self.cell).ceil() as i64;
        let center = cell_key(x, self.cell);
        // The center cell almost always decides membership for interior
        // queries; probe it first.
        if self.scan_cell(&center, x, points, dim, |d| d <= radius) {
            return true;
        }
        let mut hit = false;
        for_each_offset(dim, k, |offset| {
            if offset.iter().all(|o| *o == 0) {
                return false;
            }
            let key: Vec<i64> = center.iter().zip(offset).map(|(c, o)| c + o).collect();
            if self.scan_cell(&key, x, points, dim, |d| d <= radius) {
                hit = true;
                return true;
            }
            false
        });
        hit
    }

    /// Exact distance from `x` to the nearest point, by expanding ring
    /// search.
    fn nearest(&self, x: &[f64], points: &[f64], dim: usize) -> f64 {
        let center = cell_key(x, self.cell);
        let mut best = f64::INFINITY;
        let mut ring = 0i64;
        loop {
            for_each_offset(dim, ring, |offset| {
                if offset.iter().map(|o| o.abs()).max().unwrap_or(0) < ring {
                    return false;
                }
                let key: Vec<i64> = center.iter().zip(offset).map(|(c, o)| c + o).collect();
                self.scan_cell(&key, x, points, dim, |d| {
                    best = best.min(d);
                    false
                });
                false
            });
            // Any point in a farther ring is at least (ring) cells away.
            if best <= ring as f64 * self.cell || ring > self.max_ring {
                return best;
            }
            ring += 1;
        }
    }
}

/// Finite point cloud fattened by a margin: `x` is a member when its
/// distance to the nearest stored point is at most `margin`.
#[derive(Debug, Clone)]
pub struct SampledClosure {
    dim: usize,
    points: Vec<f64>,
    margin: f64,
    index: OnceLock<PointIndex>,
}

impl SampledClosure {
    pub fn new(points: &[Vec<f64>], margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("sampled closure needs at least one point"));
        }
        let dim = points[0].len();
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::invalid("sampled closure points have mixed dims"));
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat, margin)
    }

    pub fn from_flat(dim: usize, points: Vec<f64>, margin: f64) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::invalid("flat point list length must be a dim multiple"));
        }
        if !margin.is_finite() || margin < 0.0 {
            return Err(Error::invalid("margin must be finite and >= 0"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sampled closure points must be finite"));
        }
        Ok(Self {
            dim,
            points,
            margin,
            index: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn extent(&self) -> f64 {
        let mut extent = 0.0f64;
        for d in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for i in 0..self.len() {
                let v = self.points[i * self.dim + d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            extent = extent.max(hi - lo);
        }
        extent
    }

    fn index(&self) -> &PointIndex {
        self.index.get_or_init(|| {
            // Cell diagonal equal to the margin lets the center-cell probe
            // answer most membership queries immediately.
            let base = self.margin / (self.dim as f64).sqrt();
            let cell = if base > 0.0 {
                base
            } else {
                (self.extent() / 32.0).max(1e-9)
            };
            PointIndex::build(&self.points, self.dim, cell)
        })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        self.index().any_within(x, self.margin, &self.points, self.dim)
    }

    /// Euclidean distance from `x` to the nearest stored point.
    pub fn nearest_distance(&self, x: &[f64]) -> f64 {
        let idx = self.index();
        // Far queries would walk many empty rings; a linear scan is cheaper.
        let far = self.point_bounding_box().distance_outside(x) > 8.0 * idx.cell;
        if far {
            let mut best = f64::INFINITY;
            for i in 0..self.len() {
                let d2: f64 = self
                    .point(i)
                    .iter()
                    .zip(x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                best = best.min(d2.sqrt());
            }
            best
        } else {
            idx.nearest(x, &self.points, self.dim)
        }
    }

    fn point_bounding_box(&self) -> BoxRegion {
        let d = self.dim;
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for i in 0..self.len() {
            for (k, v) in self.point(i).iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        BoxRegion::new(lo, hi).expect("finite points imply a valid box")
    }

    pub fn bounding_box(&self) -> BoxRegion {
        self.point_bounding_box()
            .inflated(self.margin)
            .expect("finite margin")
    }
}

impl Serialize for SampledClosure {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut s = serializer.serialize_struct("SampledClosure", 2)?;
        let nested: Vec<&[f64]> = (0..self.len()).map(|i| self.point(i)).collect();
        s.serialize_field("points", &nested)?;
        s.serialize_field("margin", &self.margin)?;
        s.end()
    }
}

#[derive(Deserialize)]
struct RawSampledClosure {
    points: Vec<Vec<f64>>,
    margin: f64,
}

impl<'de> Deserialize<'de> for SampledClosure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawSampledClosure::deserialize(d)?;
        SampledClosure::new(&raw.points, raw.margin).map_err(serde::de::Error::custom)
    }
}

/// A compact region with decidable membership. Membership uses the closed
/// convention on boundaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CompactSet {
    Box(BoxRegion),
    Ball { center: Vec<f64>, radius: f64 },
    SampledClosure(SampledClosure),
}

impl CompactSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ball center must be nonempty and finite"));
        }
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::invalid("ball radius must be finite and >= 0"));
        }
        Ok(CompactSet::Ball { center, radius })
    }

    /// Re-checks the structural invariants (useful after deserializing).
    pub fn validate(&self) -> Result<()> {
        match self {
            CompactSet::Box(b) => BoxRegion::new(b.lo.clone(), b.hi.clone()).map(|_| ()),
            CompactSet::Ball { center, radius } => {
                Self::ball(center.clone(), *radius).map(|_| ())
            }
            CompactSet::SampledClosure(sc) => {
                SampledClosure::from_flat(sc.dim, sc.points.clone(), sc.margin).map(|_| ())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CompactSet::Box(b) => b.dim(),
            CompactSet::Ball { center, .. } => center.len(),
            CompactSet::SampledClosure(sc) => sc.dim(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            CompactSet::Box(b) => b.contains(x),
            CompactSet::Ball { center, radius } => {
                x.len() == center.len() && euclidean(x, center) <= *radius
            }
            CompactSet::SampledClosure(sc) => sc.contains(x),
        }
    }

    /// Euclidean distance from `x` to the set; 0 for members.
    pub fn distance_outside(&self, x: &[f64]) -> f64 {
        match self {
            CompactSet::Box(b) => b.distance_outside(x),
            CompactSet::Ball { center, radius } => (euclidean(x, center) - radius).max(0.0),
            CompactSet::SampledClosure(sc) => (sc.nearest_distance(x) - sc.margin()).max(0.0),
        }
    }

    pub fn bounding_box(&self) -> BoxRegion {
        match self {
            CompactSet::Box(b) => b.clone(),
            CompactSet::Ball { center, radius } => BoxRegion::new(
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )
            .expect("finite ball implies a valid box"),
            CompactSet::SampledClosure(sc) => sc.bounding_box(),
        }
    }

    /// The set grown by `extra` in every direction.
    pub fn inflated(&self, extra: f64) -> Result<Self> {
        if !extra.is_finite() || extra < 0.0 {
            return Err(Error::invalid("inflation must be finite and >= 0"));
        }
        Ok(match self {
            CompactSet::Box(b) => CompactSet::Box(b.inflated(extra)?),
            CompactSet::Ball { center, radius } => CompactSet::Ball {
                center: center.clone(),
                radius: radius + extra,
            },
            CompactSet::SampledClosure(sc) => CompactSet::SampledClosure(SampledClosure::from_flat(
                sc.dim,
                sc.points.clone(),
                sc.margin + extra,
            )?),
        })
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Rejection-samples `count` members of `set` (uniform over its bounding
/// box). Errors only when the attempt budget yields no members at all; a
/// partially filled batch is returned as-is.
pub fn sample_members<R: Rng + ?Sized>(
    set: &CompactSet,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let bbox = set.bounding_box();
    let budget = count.saturating_mul(REJECTION_BUDGET_FACTOR);
    let mut out = Vec::with_capacity(count);
    for _ in 0..budget {
        if out.len() == count {
            break;
        }
        let x = bbox.sample_uniform(rng);
        if set.contains(&x) {
            out.push(x);
        }
    }
    if out.is_empty() {
        return Err(Error::EmptySampleSet { attempts: budget });
    }
    Ok(out)
}

/// An MDP together with a compact state set, a compact action hull, and the
/// policies whose images the hull covers. Its derived admissibility is
///
/// `admissible(s, a) = base(s, a) && hull.contains(a) && s0.contains(f(s, a))`.
#[derive(Debug, Clone)]
pub struct RestrictedMpop {
    base: MpopSpec,
    s0: CompactSet,
    action_hull: BoxRegion,
    policies: Vec<PolicyFn>,
}

impl RestrictedMpop {
    pub fn base(&self) -> &MpopSpec {
        &self.base
    }

    pub fn s0(&self) -> &CompactSet {
        &self.s0
    }

    pub fn action_hull(&self) -> &BoxRegion {
        &self.action_hull
    }

    pub fn policies(&self) -> &[PolicyFn] {
        &self.policies
    }

    pub fn is_admissible(&self, s: &[f64], a: &[f64]) -> bool {
        self.base.is_admissible(s, a)
            && self.action_hull.contains(a)
            && self.s0.contains(&self.base.transition(s, a))
    }

    /// The restricted problem as a plain [`MpopSpec`]: base dynamics and
    /// reward, derived admissibility.
    pub fn to_mpop(&self) -> MpopSpec {
        let base = self.base.clone();
        let s0 = Arc::new(self.s0.clone());
        let hull = Arc::new(self.action_hull.clone());
        let inner = self.base.clone();
        self.base
            .with_admissible(move |s: &[f64], a: &[f64]| {
                inner.is_admissible(s, a) && hull.contains(a) && s0.contains(&inner.transition(s, a))
            })
            .unwrap_or(base)
    }
}

/// Samples states from `s0`, evaluates every policy at every sample, and
/// returns the componentwise interval hull of the resulting actions,
/// inflated by the relative slack. The hull is a compact superset of the
/// sampled image union.
pub fn build_action_hull(
    policies: &[PolicyFn],
    s0: &CompactSet,
    sample_count: usize,
    rng_seed: u64,
    rel_slack: f64,
) -> Result<BoxRegion> {
    if policies.is_empty() {
        return Err(Error::invalid("need at least one policy"));
    }
    if sample_count == 0 {
        return Err(Error::invalid("sample_count must be >= 1"));
    }
    if !rel_slack.is_finite() || rel_slack < 0.0 {
        return Err(Error::invalid("hull slack must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let samples = sample_members(s0, sample_count, &mut rng)?;
    let mut lo: Option<Vec<f64>> = None;
    let mut hi: Option<Vec<f64>> = None;
    for s in &samples {
        for policy in policies {
            let a = policy.act(s)?;
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!(
                    "policy '{}' output while building hull",
                    policy.label()
                )));
            }
            match (&mut lo, &mut hi) {
                (Some(lo), Some(hi)) => {
                    for (k, v) in a.iter().enumerate() {
                        lo[k] = lo[k].min(*v);
                        hi[k] = hi[k].max(*v);
                    }
                }
                _ => {
                    lo = Some(a.clone());
                    hi = Some(a);
                }
            }
        }
    }
    BoxRegion::new(lo.unwrap(), hi.unwrap())?.inflated_relative(rel_slack)
}

/// Assembles the restricted problem. Construction never fails on
/// substantive grounds; violations surface through the certification ops.
pub fn restrict(
    base: &MpopSpec,
    s0: CompactSet,
    policies: Vec<PolicyFn>,
    hull: BoxRegion,
) -> Result<RestrictedMpop> {
    s0.validate()?;
    if s0.dim() != base.state_dim() {
        return Err(Error::invalid("s0 dimension must match the state dimension"));
    }
    if hull.dim() != base.action_dim() {
        return Err(Error::invalid("hull dimension must match the action dimension"));
    }
    Ok(RestrictedMpop {
        base: base.clone(),
        s0,
        action_hull: hull,
        policies,
    })
}

/// Outcome of a sampled forward-invariance check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub samples: usize,
    pub steps: usize,
    /// Number of sampled initial states whose rollout left the set.
    pub violations: usize,
    /// Largest distance outside the set over all violations.
    pub worst_violation: f64,
    pub worst_state: Option<Vec<f64>>,
    pub pass: bool,
}

/// Rolls `policy` forward from sampled members of `s0` and reports every
/// sample whose trajectory leaves the set. A violating sample stops rolling
/// at its first exit.
pub fn check_forward_invariance(
    mdp: &MpopSpec,
    policy: &PolicyFn,
    s0: &CompactSet,
    sample_count: usize,
    steps: usize,
    rng_seed: u64,
) -> Result<InvarianceReport> {
    if sample_count == 0 || steps == 0 {
        return Err(Error::invalid("sample_count and steps must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let samples = sample_members(s0, sample_count, &mut rng)?;
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    let mut worst_state = None;
    for s in &samples {
        let mut state = s.clone();
        for step in 0..steps {
            let (next, _) = crate::mdp::policy_step(mdp, policy, &state, step)?;
            state = next;
            if !s0.contains(&state) {
                violations += 1;
                let d = s0.distance_outside(&state);
                if d > worst {
                    worst = d;
                    worst_state = Some(state.clone());
                }
                break;
            }
        }
    }
    Ok(InvarianceReport {
        samples: samples.len(),
        steps,
        violations,
        worst_violation: worst,
        worst_state,
        pass: violations == 0,
    })
}

/// One failed nonemptiness probe: which stored policy's action broke which
/// part of the derived admissibility rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonemptinessFailure {
    pub state: Vec<f64>,
    pub policy_label: String,
    pub action: Option<Vec<f64>>,
    pub base_ok: bool,
    pub hull_ok: bool,
    pub image_ok: bool,
}

/// Outcome of a sampled nonemptiness check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonemptinessReport {
    pub samples: usize,
    /// One check per (sample, stored policy) pair.
    pub checks: usize,
    pub failures: usize,
    pub first_failure: Option<NonemptinessFailure>,
    pub pass: bool,
}

/// Verifies, at sampled members of the restricted set, that every stored
/// policy's action passes the derived admissibility rule. Failures indicate
/// an undersized hull/slack or a policy that does not keep the set
/// invariant.
pub fn check_nonemptiness(
    restricted: &RestrictedMpop,
    sample_count: usize,
    rng_seed: u64,
) -> Result<NonemptinessReport> {
    if sample_count == 0 {
        return Err(Error::invalid("sample_count must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let samples = sample_members(restricted.s0(), sample_count, &mut rng)?;
    let mut checks = 0usize;
    let mut failures = 0usize;
    let mut first_failure = None;
    for s in &samples {
        for policy in restricted.policies() {
            checks += 1;
            let (action, base_ok, hull_ok, image_ok) = match policy.act(s) {
                Ok(a) => {
                    let base_ok = restricted.base().is_admissible(s, &a);
                    let hull_ok = restricted.action_hull().contains(&a);
                    let image_ok = restricted
                        .s0()
                        .contains(&restricted.base().transition(s, &a));
                    (Some(a), base_ok, hull_ok, image_ok)
                }
                Err(_) => (None, false, false, false),
            };
            if !(base_ok && hull_ok && image_ok) {
                failures += 1;
                if first_failure.is_none() {
                    first_failure = Some(NonemptinessFailure {
                        state: s.clone(),
                        policy_label: policy.label().to_string(),
                        action,
                        base_ok,
                        hull_ok,
                        image_ok,
                    });
                }
            }
        }
    }
    Ok(NonemptinessReport {
        samples: samples.len(),
        checks,
        failures,
        first_failure,
        pass: failures == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::running_example;

    fn negate() -> PolicyFn {
        PolicyFn::new("negate", |s: &[f64]| vec![-s[0]])
    }

    #[test]
    fn box_membership_and_distance() {
        let b = BoxRegion::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        assert!(b.contains(&[0.0, 1.0]));
        assert!(b.contains(&[1.0, 2.0]));
        assert!(!b.contains(&[1.1, 1.0]));
        assert!((b.distance_outside(&[2.0, 3.0]) - 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(b.distance_outside(&[0.5, 0.5]), 0.0);
    }

    #[test]
    fn ball_membership_uses_closed_boundary() {
        let ball = CompactSet::ball(vec![0.0, 0.0], 1.0).unwrap();
        assert!(ball.contains(&[1.0, 0.0]));
        assert!(!ball.contains(&[1.0 + 1e-9, 0.0]));
        assert!((ball.distance_outside(&[0.0, 2.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampled_closure_membership_is_margin_ball_union() {
        let sc = SampledClosure::new(&[vec![0.0, 0.0], vec![1.0, 0.0]], 0.25).unwrap();
        assert!(sc.contains(&[0.2, 0.1]));
        assert!(sc.contains(&[1.25, 0.0]));
        assert!(!sc.contains(&[0.5, 0.0]));
        assert!(!sc.contains(&[1.3, 0.0]));
        assert!((sc.nearest_distance(&[0.5, 0.4]) - (0.25f64 + 0.16).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sampled_closure_far_query_distance() {
        let sc = SampledClosure::new(&[vec![0.0, 0.0], vec![0.1, 0.0]], 0.05).unwrap();
        let d = sc.nearest_distance(&[10.0, 0.0]);
        assert!((d - 9.9).abs() < 1e-12);
        let set = CompactSet::SampledClosure(sc);
        assert!((set.distance_outside(&[10.0, 0.0]) - 9.85).abs() < 1e-12);
    }

    #[test]
    fn compact_set_json_round_trip() {
        let original = CompactSet::SampledClosure(
            SampledClosure::new(&[vec![0.0, 1.0], vec![2.0, 3.0]], 0.5).unwrap(),
        );
        let json = serde_json::to_string(&original).unwrap();
        assert!(json.contains("\"type\":\"sampled_closure\""));
        let back: CompactSet = serde_json::from_str(&json).unwrap();
        assert!(back.contains(&[0.1, 1.1]));
        assert!(!back.contains(&[1.0, 2.0]));

        let b = CompactSet::Box(BoxRegion::new(vec![-1.0], vec![1.0]).unwrap());
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"type\":\"box\""));
        let back: CompactSet = serde_json::from_str(&json).unwrap();
        assert!(back.contains(&[0.7]));
    }

    #[test]
    fn invalid_compact_sets_rejected() {
        assert!(BoxRegion::new(vec![1.0], vec![0.0]).is_err());
        assert!(CompactSet::ball(vec![0.0], -1.0).is_err());
        assert!(SampledClosure::new(&[], 0.1).is_err());
        assert!(serde_json::from_str::<CompactSet>(
            "{\"type\":\"box\",\"lo\":[1.0],\"hi\":[0.0]}"
        )
        .is_err());
    }

    #[test]
    fn hull_of_negate_policy_covers_state_range() {
        let s0 = running_example::state_set();
        let hull = build_action_hull(&[negate()], &s0, 8192, 7, 0.01).unwrap();
        assert!(hull.lo()[0] <= -0.99 && hull.lo()[0] >= -1.05);
        assert!(hull.hi()[0] >= 0.99 && hull.hi()[0] <= 1.05);

        // Dense sampling with zero slack approaches [-1, 1] from inside.
        let tight = build_action_hull(&[negate()], &s0, 20_000, 7, 0.0).unwrap();
        assert!(tight.lo()[0] >= -1.0 && tight.lo()[0] <= -0.999);
        assert!(tight.hi()[0] <= 1.0 && tight.hi()[0] >= 0.999);
    }

    #[test]
    fn hull_of_constant_policy_is_degenerate() {
        let s0 = running_example::state_set();
        let c = PolicyFn::new("const", |_s: &[f64]| vec![0.4]);
        let hull = build_action_hull(&[c], &s0, 64, 3, 0.0).unwrap();
        assert_eq!(hull.lo(), &[0.4]);
        assert_eq!(hull.hi(), &[0.4]);
        // Relative slack cannot widen a zero-width interval.
        let inflated = build_action_hull(
            &[PolicyFn::new("const", |_s: &[f64]| vec![0.4])],
            &s0,
            64,
            3,
            0.05,
        )
        .unwrap();
        assert_eq!(inflated.lo(), &[0.4]);
    }

    #[test]
    fn zero_policy_does_not_widen_negate_hull() {
        let s0 = running_example::state_set();
        let hull_one = build_action_hull(&[negate()], &s0, 512, 11, 0.0).unwrap();
        let hull_two = build_action_hull(
            &[negate(), PolicyFn::new("zero", |_s: &[f64]| vec![0.0])],
            &s0,
            512,
            11,
            0.0,
        )
        .unwrap();
        assert_eq!(hull_one, hull_two);
    }

    #[test]
    fn derived_admissibility_matches_direct_evaluation() {
        let r = running_example::restricted(0.9).unwrap();
        // At the origin every hull action maps back inside.
        for a in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            assert!(r.is_admissible(&[0.0], &[a]));
        }
        // f(0.9, 0.05) = 0.9 + tanh(0.05) stays inside [-1, 1].
        assert!(r.is_admissible(&[0.9], &[0.05]));
        // f(0.9, 0.2) leaves the set.
        assert!(!r.is_admissible(&[0.9], &[0.2]));
        // Outside the hull: inadmissible regardless of the image.
        assert!(!r.is_admissible(&[0.0], &[1.5]));
    }

    #[test]
    fn invariance_passes_for_negate_policy() {
        let mdp = running_example::mdp(0.9).unwrap();
        let report =
            check_forward_invariance(&mdp, &negate(), &running_example::state_set(), 200, 25, 5)
                .unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn invariance_flags_escaping_policy_with_distance() {
        let mdp = running_example::mdp(0.9).unwrap();
        // Degenerate box pins the sample at s = 0.9, where a large constant
        // action exits in one step by about 0.9.
        let s0 = CompactSet::Box(BoxRegion::new(vec![0.9], vec![0.9]).unwrap());
        let push = PolicyFn::new("push", |_s: &[f64]| vec![5.0]);
        let report = check_forward_invariance(&mdp, &push, &s0, 4, 1, 5).unwrap();
        assert!(!report.pass);
        assert_eq!(report.violations, 4);
        let expected = 0.9 + 5.0f64.tanh() - 0.9; // distance past hi = 0.9
        assert!((report.worst_violation - expected).abs() < 1e-9);
    }

    #[test]
    fn invariance_trivial_for_frozen_dynamics() {
        let mdp = MpopSpec::new(
            1,
            1,
            0.9,
            |s: &[f64], _a: &[f64]| s.to_vec(),
            |_s: &[f64], _a: &[f64]| 0.0,
            |_s: &[f64], _a: &[f64]| true,
        )
        .unwrap();
        let push = PolicyFn::new("push", |_s: &[f64]| vec![99.0]);
        let report =
            check_forward_invariance(&mdp, &push, &running_example::state_set(), 50, 10, 1)
                .unwrap();
        assert!(report.pass);
    }

    #[test]
    fn nonemptiness_passes_for_running_example() {
        let r = running_example::restricted(0.9).unwrap();
        let report = check_nonemptiness(&r, 400, 9).unwrap();
        assert!(report.pass, "{report:?}");
        assert_eq!(report.checks, report.samples);
    }

    #[test]
    fn nonemptiness_flags_shrunken_hull() {
        let base = running_example::mdp(0.9).unwrap();
        let r = restrict(
            &base,
            running_example::state_set(),
            vec![negate()],
            BoxRegion::new(vec![0.0], vec![0.5]).unwrap(),
        )
        .unwrap();
        let report = check_nonemptiness(&r, 400, 9).unwrap();
        assert!(!report.pass);
        assert!(report.failures > 0);
        let failure = report.first_failure.unwrap();
        assert!(!failure.hull_ok);
    }

    #[test]
    fn sampling_prefix_is_stable_under_larger_counts() {
        let s0 = running_example::state_set();
        let mut rng_a = ChaCha8Rng::seed_from_u64(42);
        let mut rng_b = ChaCha8Rng::seed_from_u64(42);
        let small = sample_members(&s0, 10, &mut rng_a).unwrap();
        let large = sample_members(&s0, 25, &mut rng_b).unwrap();
        assert_eq!(&large[..10], &small[..]);
    }

    #[test]
    fn rejection_sampling_reports_empty_sets() {
        // Margin-zero closure of two separated points: uniform box samples
        // hit the point set with probability zero.
        let sc = SampledClosure::new(&[vec![0.0, 0.0], vec![1.0, 1.0]], 0.0).unwrap();
        let set = CompactSet::SampledClosure(sc);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        match sample_members(&set, 3, &mut rng) {
            Err(Error::EmptySampleSet { attempts }) => assert_eq!(attempts, 300),
            other => panic!("expected EmptySampleSet, got {other:?}"),
        }
    }
}
