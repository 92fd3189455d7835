//! A simulation and verification laboratory for stochastic policy optimization
//! on one-state bandits and finite MDPs.
//!
//! The crate is organized around five concerns:
//!
//! - [`bandit`]: reward instances, softmax policies, exact gradients/Hessians,
//!   and the closed-form inequality slacks (Łojasiewicz-type and smoothness).
//! - [`rules`]: the update rules (true-gradient and on-policy stochastic
//!   variants, baselines, SAMBA) behind one stepping interface, plus the
//!   importance-sampling estimator and its exact-moment oracle.
//! - [`committal`]: deterministic forced-action trajectories, the committal
//!   rate estimator, closed-form commit-forever probability bounds, and the
//!   optimality-smart verifier.
//! - [`mdp`]: tabular MDP solvers (V/Q/advantage/discounted state
//!   distribution), exact policy gradients, the parallel IS estimator, and
//!   the MDP versions of the update rules.
//! - [`harness`]: seeded Monte Carlo trials, failure-probability estimation,
//!   convergence-rate fitting, ensembles, and the outcome table.
//!
//! All state objects are immutable values and all operations are pure
//! functions of their inputs, so everything here is safe to fan out across
//! threads. Randomness enters only through [`harness`], which derives every
//! draw from a `(master_seed, trial_index)` keyed counter stream.

// Indexed loops over small dense matrices and `!(x > 0.0)` NaN-rejecting
// guards are deliberate in the numeric kernels.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod committal;
pub mod harness;
pub mod mdp;
pub mod rules;
pub mod verify;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input contained NaN or infinity where a finite value is required.
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    /// An instance failed validation at construction.
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    /// An update-rule spec failed validation at construction.
    #[error("invalid rule spec: {0}")]
    InvalidRule(String),
    /// The requested operation does not support this rule kind.
    #[error("unsupported rule kind for this operation: {0}")]
    UnsupportedRule(&'static str),
    /// Normalized update requested at a point with zero gradient.
    #[error("zero gradient: normalized update is undefined")]
    ZeroGradient,
    /// Action index out of range.
    #[error("action index {action} out of range for {arms} arms")]
    ActionOutOfRange { action: usize, arms: usize },
    /// A matrix operation required symmetry and the input was not symmetric.
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    /// A trajectory or window is too short for the requested estimate.
    #[error("trajectory too short: need at least {need}, got {got}")]
    TooShort { need: usize, got: usize },
    /// A numeric abort (NaN or non-finite state) during simulation.
    #[error("numerical abort at step {step}: {what}")]
    NumericalAbort { step: usize, what: &'static str },
    /// SAMBA's forced-greedy precondition was violated mid-trajectory.
    #[error("greedy arm changed at step {step}; forced arm is no longer greedy")]
    GreedyArmChanged { step: usize },
    /// Greedy action values are tied where a unique maximizer is required.
    #[error("tied greedy values in state {state}")]
    TiedGreedy { state: usize },
    /// A probability left the open simplex during a direct-simplex update.
    #[error("simplex step rejected at arm {arm}: probability {value} outside (0, 1)")]
    SimplexStepRejected { arm: usize, value: f64 },
    /// Ensemble sizing is impossible because the probe success rate is zero.
    #[error("cannot size ensemble: probe success probability is zero; increase probes or horizon")]
    ZeroSuccessProbability,
}

pub type Result<T> = std::result::Result<T, Error>;
