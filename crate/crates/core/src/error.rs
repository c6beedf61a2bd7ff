//! Shared error type for all solver, restriction, and system-building
//! operations.

use thiserror::Error;

use crate::mdp::ViDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A policy or candidate action violated the admissibility rule at a
    /// visited state.
    #[error("inadmissible action at step {step}: state {state:?}, action {action:?}")]
    InadmissibleAction {
        step: usize,
        state: Vec<f64>,
        action: Vec<f64>,
    },

    /// Every candidate action was inadmissible at the given state.
    #[error("no admissible candidate action at state {state:?}")]
    NoAdmissibleAction { state: Vec<f64> },

    /// A transition, reward, or value handle produced NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFiniteValue { context: String },

    /// Numerical integration produced a non-finite state (finite-time
    /// blow-up or a step size too coarse for the dynamics).
    #[error("non-finite state in {context}")]
    NonFiniteState { context: String },

    /// Value iteration hit its sweep budget before reaching the requested
    /// tolerance. The diagnostics describe the partial run.
    #[error(
        "value iteration did not converge: residual {final_residual:.3e} after {sweeps} sweeps",
        final_residual = diagnostics.final_residual,
        sweeps = diagnostics.sweeps
    )]
    NotConverged { diagnostics: ViDiagnostics },

    /// Rejection sampling of a compact set produced no members within the
    /// attempt budget.
    #[error("rejection sampling produced no set members in {attempts} attempts")]
    EmptySampleSet { attempts: usize },

    /// An argument lies outside the domain of a closed-form expression.
    #[error("domain error: {what}")]
    DomainError { what: String },

    /// The inertia matrix failed its positive-definite factorization.
    #[error("inertia matrix is not positive definite at the probed configuration")]
    InertiaNotPD,

    /// The actuation matrix is numerically singular at the probed
    /// configuration.
    #[error("actuation matrix is numerically singular")]
    ActuationSingular,

    /// The closed-loop linearization target is not Hurwitz stable.
    #[error("closed-loop matrix is not Hurwitz")]
    NotHurwitz,

    /// A parameter violated a documented precondition.
    #[error("invalid parameter: {what}")]
    InvalidParameter { what: String },
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>) -> Self {
        Error::InvalidParameter { what: what.into() }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFiniteValue {
            context: context.into(),
        }
    }
}
