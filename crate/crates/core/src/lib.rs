//! Dynamic programming on deterministic metric MDPs with compact
//! forward-invariant restrictions.
//!
//! The crate is organized around one pipeline:
//!
//! 1. Describe a deterministic MDP ([`mdp::MpopSpec`]) or build one from a
//!    continuous-time control affine system sampled under a zero-order hold
//!    ([`sampled_data`], [`robotics`]).
//! 2. Pick a compact state set and one or more policies that keep it
//!    forward-invariant, then derive a well-posed restricted problem whose
//!    admissible actions map the state back into the set ([`restriction`]).
//! 3. Solve the restricted problem by value iteration over a rectangular
//!    interpolation grid ([`grid`], [`mdp::value_iterate`]) with
//!    contraction-based convergence diagnostics.
//!
//! Certification of invariance and nonemptiness is sampling-based and fully
//! seeded; identical seeds reproduce identical results.

pub mod error;
pub mod grid;
pub mod mdp;
pub mod models;
pub mod restriction;
pub mod robotics;
pub mod running_example;
pub mod sampled_data;
pub mod tabular;

pub use error::{Error, Result};
pub use grid::{ActionGrid, GridValueFn, OutOfRange};
pub use mdp::{MpopSpec, PolicyFn, ValueFn, ViDiagnostics};
pub use restriction::{BoxRegion, CompactSet, RestrictedMpop};
