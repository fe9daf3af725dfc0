//! Optimal consumption, investment and life insurance for a shortfall-averse
//! agent whose consumption may not fall below a fraction of its running peak.
//!
//! The value function is known in closed form through its dual transform
//! ([`dual`]). Feedback controls are recovered by inverting the dual map
//! ([`primal`], [`policy`]), simulated ([`simulator`]), and checked against
//! the defining equations ([`verifier`]).

// `!(v > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dual;
pub mod error;
pub mod io;
pub mod model;
pub mod policy;
pub mod primal;
pub mod roots;
pub mod simulator;
pub mod verifier;

pub use dual::{CoefficientSet, DualBoundaries, DualRegion, DualSlice, DualSolution, Jet, PowerLaw};
pub use error::{Error, Result};
pub use model::{check_assumption_a1, derive_constants, AssumptionA1, DerivedConstants, Model, ModelParams};
pub use primal::{BoundarySet, PolicySlice, PrimalRegion, Solver};
pub use policy::{JumpResult, PolicyDecision, PremiumThreshold};
pub use simulator::{Audit, BudgetEstimate, EnsembleResult, PathOutput, PathRecord, SimConfig, Simulator, SummaryRow, Variant, WeakOrderReport};
pub use verifier::CheckReport;
