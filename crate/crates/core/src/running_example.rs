//! The scalar benchmark system `f(s, a) = s + tanh(a)` with quadratic cost
//! `r(s, a) = -s^2 - tanh(a)^2`, its restriction to `[-1, 1]`, and the
//! closed-form admissibility oracle that restriction must reproduce.
//!
//! On `[-1, 1]` the image condition `|s + tanh(a)| <= 1` has an explicit
//! solution in `a` through `atanh`, which makes this system the exact
//! reference for the interval-hull restriction pipeline.

use crate::error::{Error, Result};
use crate::mdp::{MpopSpec, PolicyFn};
use crate::restriction::{restrict, BoxRegion, CompactSet, RestrictedMpop};

/// The unrestricted problem: every action admissible everywhere.
pub fn mdp(discount: f64) -> Result<MpopSpec> {
    MpopSpec::new(
        1,
        1,
        discount,
        |s: &[f64], a: &[f64]| vec![s[0] + a[0].tanh()],
        |s: &[f64], a: &[f64]| -s[0] * s[0] - a[0].tanh().powi(2),
        |_s: &[f64], _a: &[f64]| true,
    )
}

/// Variant with the bounded reward `exp(-s^2) - tanh(a)^2`; same dynamics.
pub fn gaussian_reward_mdp(discount: f64) -> Result<MpopSpec> {
    mdp(discount)?.with_reward(|s: &[f64], a: &[f64]| (-s[0] * s[0]).exp() - a[0].tanh().powi(2))
}

/// The continuous policy `a = -s`, which keeps [`state_set`] invariant.
pub fn invariance_policy() -> PolicyFn {
    PolicyFn::new("negate", |s: &[f64]| vec![-s[0]])
}

/// The invariant state set `[-1, 1]`.
pub fn state_set() -> CompactSet {
    CompactSet::Box(BoxRegion::new(vec![-1.0], vec![1.0]).unwrap())
}

/// The exact action hull `[-1, 1]`: the image of the state set under the
/// invariance policy.
pub fn action_hull() -> BoxRegion {
    BoxRegion::new(vec![-1.0], vec![1.0]).unwrap()
}

/// The restricted problem built from the exact hull, so that the derived
/// admissibility coincides with the closed-form oracle.
pub fn restricted(discount: f64) -> Result<RestrictedMpop> {
    restrict(
        &mdp(discount)?,
        state_set(),
        vec![invariance_policy()],
        action_hull(),
    )
}

fn check_domain(s: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&s) {
        return Err(Error::DomainError {
            what: format!("state {s} outside [-1, 1]"),
        });
    }
    Ok(())
}

/// Closed-form test for `s + tanh(a)` staying in `[-1, 1]`:
/// `a >= atanh(-1 - s)` below the origin, anything at the origin,
/// `a <= atanh(1 - s)` above it.
pub fn admissible(s: f64, a: f64) -> Result<bool> {
    check_domain(s)?;
    Ok(if s < 0.0 {
        a >= (-1.0 - s).atanh()
    } else if s > 0.0 {
        a <= (1.0 - s).atanh()
    } else {
        true
    })
}

/// Closed-form admissible interval once actions are clipped to the hull
/// `[-1, 1]`: the interval is trimmed by `atanh` near the ends of the state
/// range and is the full hull in the middle band.
pub fn c0_interval(s: f64) -> Result<(f64, f64)> {
    check_domain(s)?;
    let band = 1.0 - 1.0f64.tanh();
    Ok(if s <= -band {
        ((-1.0 - s).atanh(), 1.0)
    } else if s >= band {
        (-1.0, (1.0 - s).atanh())
    } else {
        (-1.0, 1.0)
    })
}
