//! Exact solution of fully discretized MDPs.
//!
//! [`DiscreteMdp`] stores per-state feasible actions with sparse transition
//! rows. [`value_iteration`] runs synchronous (Jacobi) sweeps to the
//! sup-norm stopping rule `‖V^n − V^{n−1}‖_∞ < ε(1−γ)/(2γ)`, which bounds
//! the result within `ε/2` of the fixed point. [`exact_policy_value`]
//! evaluates a fixed policy to a much tighter tolerance for use as the
//! optimal benchmark denominator.

pub mod discretize;
pub mod io;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("invalid discrete MDP: {0}")]
    InvalidMdp(String),
    #[error("value iteration hit the {max_iters}-iteration cap at residual {residual:.3e}")]
    NotConverged { max_iters: usize, residual: f64 },
    #[error("policy evaluation failed: {0}")]
    SolveFailed(String),
    #[error("discretization error: {0}")]
    Discretization(String),
}

/// Sparse probability row over successor states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct SparseRow<S: Scalar> {
    pub entries: Vec<(u32, S)>,
}

impl<S: Scalar> SparseRow<S> {
    pub fn unit(index: u32) -> Self {
        Self { entries: vec![(index, S::one())] }
    }

    pub fn sum(&self) -> S {
        self.entries.iter().fold(S::zero(), |a, &(_, p)| a + p)
    }

    pub fn expectation(&self, values: &DVector<S>) -> S {
        self.entries
            .iter()
            .fold(S::zero(), |a, &(j, p)| a + p * values[j as usize])
    }

    /// One categorical draw; consumes exactly one uniform.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u = S::sample_uniform(rng, S::zero(), S::one());
        let mut acc = S::zero();
        for &(j, p) in &self.entries {
            acc += p;
            if u < acc {
                return j;
            }
        }
        self.entries.last().map(|&(j, _)| j).unwrap_or(0)
    }
}

/// One feasible action at one state: an opaque integer label (the resource
/// level delta for storage problems), its immediate contribution and the
/// transition row.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DiscreteAction<S: Scalar> {
    pub label: i32,
    pub contribution: S,
    pub row: SparseRow<S>,
}

/// Enumerated MDP with explicit transition probabilities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DiscreteMdp<S: Scalar> {
    pub discount: S,
    /// Feasible actions per state; every state has at least one.
    pub actions: Vec<Vec<DiscreteAction<S>>>,
    /// Optional state coordinates for inspection dumps, one row per state.
    pub coords: Vec<Vec<S>>,
    pub coord_names: Vec<String>,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl<S: Scalar> DiscreteMdp<S> {
    pub fn new(
        discount: S,
        actions: Vec<Vec<DiscreteAction<S>>>,
        coords: Vec<Vec<S>>,
        coord_names: Vec<String>,
    ) -> Result<Self, ExactError> {
        if actions.is_empty() {
            return Err(ExactError::InvalidMdp("no states".into()));
        }
        if !(discount >= S::zero() && discount < S::one()) {
            return Err(ExactError::InvalidMdp(format!(
                "discount {} outside [0, 1)",
                discount.to_f64x()
            )));
        }
        if !coords.is_empty() && coords.len() != actions.len() {
            return Err(ExactError::InvalidMdp("coordinate rows do not match state count".into()));
        }
        let n = actions.len() as u32;
        for (s, acts) in actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(ExactError::InvalidMdp(format!("state {s} has no feasible action")));
            }
            for a in acts {
                if !a.contribution.is_finite() {
                    return Err(ExactError::InvalidMdp(format!(
                        "state {s} action {} has non-finite contribution",
                        a.label
                    )));
                }
                let mut sum = S::zero();
                for &(j, p) in &a.row.entries {
                    if j >= n {
                        return Err(ExactError::InvalidMdp(format!(
                            "state {s} action {} references state {j} out of {n}",
                            a.label
                        )));
                    }
                    if p < S::zero() {
                        return Err(ExactError::InvalidMdp(format!(
                            "state {s} action {} has negative probability",
                            a.label
                        )));
                    }
                    sum += p;
                }
                if (sum - S::one()).abs() > S::of(ROW_SUM_TOL) {
                    return Err(ExactError::InvalidMdp(format!(
                        "state {s} action {} row sums to {}",
                        a.label,
                        sum.to_f64x()
                    )));
                }
            }
        }
        Ok(Self { discount, actions, coords, coord_names })
    }

    pub fn n_states(&self) -> usize {
        self.actions.len()
    }
}

/// Converged value function with its iteration trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ValueFunction<S: Scalar> {
    pub values: DVector<S>,
    pub iterations: usize,
    pub final_residual: S,
    pub residual_history: Vec<S>,
}

/// One synchronous Bellman-optimality sweep over an immutable previous value
/// vector. States are independent, so the sweep parallelizes.
pub fn bellman_sweep<S: Scalar>(mdp: &DiscreteMdp<S>, values: &DVector<S>) -> DVector<S> {
    let out: Vec<S> = mdp
        .actions
        .par_iter()
        .map(|acts| {
            let mut best = S::of(f64::NEG_INFINITY);
            for a in acts {
                let q = a.contribution + mdp.discount * a.row.expectation(values);
                if q > best {
                    best = q;
                }
            }
            best
        })
        .collect();
    DVector::from_vec(out)
}

/// Value iteration from `V = 0` to the sup-norm stopping rule. `epsilon` is
/// the dollar accuracy of the returned values (within `ε/2` of `V*`).
pub fn value_iteration<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    epsilon: S,
    max_iters: usize,
) -> Result<ValueFunction<S>, ExactError> {
    if !(epsilon > S::zero()) {
        return Err(ExactError::InvalidMdp("epsilon must be positive".into()));
    }
    let gamma = mdp.discount;
    let threshold = if gamma > S::zero() {
        epsilon * (S::one() - gamma) / (S::of(2.0) * gamma)
    } else {
        S::zero()
    };
    let mut values = DVector::zeros(mdp.n_states());
    let mut history = Vec::new();
    for iter in 1..=max_iters {
        let next = bellman_sweep(mdp, &values);
        let residual = (&next - &values).amax();
        history.push(residual);
        values = next;
        if residual <= threshold {
            return Ok(ValueFunction {
                values,
                iterations: iter,
                final_residual: residual,
                residual_history: history,
            });
        }
    }
    Err(ExactError::NotConverged {
        max_iters,
        residual: history.last().map(|r| r.to_f64x()).unwrap_or(f64::NAN),
    })
}

/// Per-state argmax of the one-step lookahead, ties to the lowest action
/// index.
pub fn extract_greedy_policy<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    values: &DVector<S>,
) -> Vec<u32> {
    mdp.actions
        .par_iter()
        .map(|acts| {
            let mut best = S::of(f64::NEG_INFINITY);
            let mut best_idx = 0u32;
            for (i, a) in acts.iter().enumerate() {
                let q = a.contribution + mdp.discount * a.row.expectation(values);
                if q > best {
                    best = q;
                    best_idx = i as u32;
                }
            }
            best_idx
        })
        .collect::<Vec<_>>()
}

/// Exact evaluation of a fixed policy: solves `(I − γP_π)V = C_π` by fixed-
/// point iteration with the contraction error bound driven to `tol`
/// relative accuracy.
pub fn exact_policy_value<S: Scalar>(
    mdp: &DiscreteMdp<S>,
    policy: &[u32],
    tol: S,
) -> Result<DVector<S>, ExactError> {
    if policy.len() != mdp.n_states() {
        return Err(ExactError::SolveFailed(format!(
            "policy has {} entries for {} states",
            policy.len(),
            mdp.n_states()
        )));
    }
    for (s, &a) in policy.iter().enumerate() {
        if a as usize >= mdp.actions[s].len() {
            return Err(ExactError::SolveFailed(format!(
                "policy action {a} out of range at state {s}"
            )));
        }
    }
    let gamma = mdp.discount;
    let mut values: DVector<S> = DVector::zeros(mdp.n_states());
    if gamma == S::zero() {
        return Ok(DVector::from_fn(mdp.n_states(), |s, _| {
            mdp.actions[s][policy[s] as usize].contribution
        }));
    }
    let factor = gamma / (S::one() - gamma);
    // Fixed-point iterations converge geometrically at rate gamma; the cap
    // below is generous for any discount below 0.9999.
    let max_iters = 50_000_000usize;
    for _ in 0..max_iters {
        let next: Vec<S> = policy
            .par_iter()
            .enumerate()
            .map(|(s, &a)| {
                let act = &mdp.actions[s][a as usize];
                act.contribution + gamma * act.row.expectation(&values)
            })
            .collect();
        let next = DVector::from_vec(next);
        let residual = (&next - &values).amax();
        values = next;
        let scale = values.amax().max(S::one());
        if residual * factor <= tol * scale {
            return Ok(values);
        }
    }
    Err(ExactError::SolveFailed("policy evaluation did not converge".into()))
}
