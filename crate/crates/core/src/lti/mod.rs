//! Linear time-invariant plumbing: polynomials, rational transfer
//! functions, state-space realization, a fixed-step RK4 network
//! simulator, and step-response metrics.
//!
//! Transfer functions canonicalize on construction (shared `s` powers
//! and matching root pairs cancel, denominators are monic), and equality
//! is decided by cross-multiplication so it never depends on a prior
//! cancellation succeeding. Simulation is strictly deterministic: fixed
//! step, fixed evaluation order, no randomness.

mod metrics;
mod network;
mod polynomial;
mod state_space;
mod transfer;

pub use metrics::{crossing_time, first_entry_time, step_metrics, StepMetrics};
pub use network::{
    step_response, BlockId, GuardError, Network, SimTrace, Termination,
};
pub use polynomial::Polynomial;
pub use state_space::{to_state_space, StateSpaceModel};
pub use transfer::{feedback_connect, sensitivity, RationalTransfer, ROOT_CANCEL_TOL};

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum LtiError {
    #[error("denominator polynomial is zero")]
    ZeroDenominator,
    #[error("division by the zero transfer function")]
    DivisionByZeroTransfer,
    #[error("feedback interconnection is singular (1 + loop gain vanishes identically)")]
    AlgebraicLoop,
    #[error("transfer function is improper (relative degree {relative_degree})")]
    ImproperTransfer { relative_degree: isize },
    #[error("algebraic loop through feedthrough blocks: {cycle:?}")]
    AlgebraicLoopDetected { cycle: Vec<String> },
    #[error("signal '{name}' referenced by '{consumer}' is not produced anywhere")]
    SignalMissing { name: String, consumer: String },
    #[error("signal '{name}' is produced twice")]
    DuplicateSignal { name: String },
    #[error("invalid time grid: dt={dt}, t_final={t_final}")]
    InvalidTimeGrid { dt: f64, t_final: f64 },
    #[error("block '{block}': initial state needs {expected} entries, got {got}")]
    StateDimension {
        block: String,
        expected: usize,
        got: usize,
    },
    #[error("block '{block}': derivative port requires a feedthrough-free block")]
    FeedthroughDerivative { block: String },
    #[error("block '{block}': initial output underdetermined with feedthrough")]
    FeedthroughInitialOutput { block: String },
    #[error("block '{block}': output row is zero, cannot match an initial output")]
    ZeroOutputRow { block: String },
    #[error("trace has fewer than two samples")]
    TraceTooShort,
    #[error("step size is zero: reference equals the initial value")]
    DegenerateStep,
}
