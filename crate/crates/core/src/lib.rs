//! Energy-storage dispatch benchmarks for approximate dynamic programming.
//!
//! The crate bundles:
//!
//! * [`estimators`] — least-squares / instrumental-variables / projected
//!   Bellman-error solvers plus a generic errors-in-variables regression;
//! * [`mdp`] — post-decision-state MDP abstractions, quadratic bases, greedy
//!   policies, the approximate-policy-iteration loop and policy simulation;
//! * [`exact`] — discretized MDPs with explicit transition rows, value
//!   iteration and exact policy evaluation;
//! * [`storage`] — the storage-dispatch physics (flows, transitions,
//!   contribution) and calibrated wind / price / demand models with fitting
//!   routines;
//! * [`search`] — Gaussian-process direct policy search driven by the
//!   knowledge gradient for continuous parameters;
//! * [`bench`] — the benchmark-problem library, experiment runner,
//!   percent-of-optimal evaluation and report emission.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! benchmark pipeline and the CLI instantiate `f64`, for which the aliases
//! below are provided.

pub mod bench;
pub mod estimators;
pub mod exact;
pub mod mdp;
pub mod scalar;
pub mod search;
pub mod storage;

pub use scalar::Scalar;

/// Scalar type the shipped pipeline runs at.
pub type Real = f64;

pub type EstimatorInputs = estimators::EstimatorInputs<Real>;
pub type WeightVector = estimators::WeightVector<Real>;
pub type IvRegressionProblem = estimators::IvRegressionProblem<Real>;








