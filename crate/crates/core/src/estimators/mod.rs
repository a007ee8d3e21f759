//! Policy-evaluation estimators.
//!
//! Four ways of solving the sampled fixed-point system
//! `C = (Φ_prev − γ Φ_next) θ + noise` for the value-function weights θ:
//!
//! * [`solve_ls_bellman`] — plain least squares on the regressor matrix.
//! * [`solve_iv_bellman`] — instrumental variables, with `Φ_prev` as the
//!   instrument (LSTD).
//! * [`solve_ls_projected_bellman`] — least squares after projecting the
//!   system onto the span of `Φ_prev`.
//! * [`solve_iv_projected_bellman`] — instrumental variables on the projected
//!   system.
//!
//! The last three are algebraically equivalent whenever the rank conditions
//! of [`check_rank_assumptions`] hold; the first is a genuinely different
//! (and generally inconsistent) estimator because the sampled `Φ_next` is a
//! noisy observation of its conditional expectation. [`solve_iv_regression`]
//! is the generic errors-in-variables regression the IV estimators
//! instantiate.
//!
//! All solves go through orthogonal factorizations (SVD); nothing ever forms
//! a normal-equations inverse or the `n×n` projection matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix {matrix} is numerically rank deficient (condition estimate {condition:.3e})")]
    RankDeficient { matrix: &'static str, condition: f64 },
    #[error("solution contains non-finite entries")]
    NonFinite,
}

/// Sampled quantities consumed by every Bellman-error estimator: feature rows
/// of the starting post-decision states, feature rows of the successor
/// post-decision states, realized contributions and the discount factor.
#[derive(Debug, Clone)]
pub struct EstimatorInputs<S: Scalar> {
    phi_prev: DMatrix<S>,
    phi_next: DMatrix<S>,
    contributions: DVector<S>,
    discount: S,
}

impl<S: Scalar> EstimatorInputs<S> {
    pub fn new(
        phi_prev: DMatrix<S>,
        phi_next: DMatrix<S>,
        contributions: DVector<S>,
        discount: S,
    ) -> Result<Self, EstimatorError> {
        let (n, k) = phi_prev.shape();
        if phi_next.shape() != (n, k) {
            return Err(EstimatorError::ShapeMismatch(format!(
                "phi_prev is {}x{} but phi_next is {}x{}",
                n,
                k,
                phi_next.nrows(),
                phi_next.ncols()
            )));
        }
        if contributions.len() != n {
            return Err(EstimatorError::ShapeMismatch(format!(
                "{} contribution entries for {} sample rows",
                contributions.len(),
                n
            )));
        }
        if k > n {
            return Err(EstimatorError::ShapeMismatch(format!(
                "{} basis functions exceed {} samples",
                k, n
            )));
        }
        if discount < S::zero() || discount >= S::one() {
            return Err(EstimatorError::ShapeMismatch(format!(
                "discount {} outside [0, 1)",
                discount.to_f64x()
            )));
        }
        Ok(Self { phi_prev, phi_next, contributions, discount })
    }

    pub fn n_samples(&self) -> usize {
        self.phi_prev.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.phi_prev.ncols()
    }

    pub fn phi_prev(&self) -> &DMatrix<S> {
        &self.phi_prev
    }

    pub fn phi_next(&self) -> &DMatrix<S> {
        &self.phi_next
    }

    pub fn contributions(&self) -> &DVector<S> {
        &self.contributions
    }

    pub fn discount(&self) -> S {
        self.discount
    }

    /// The regressor matrix `Φ_prev − γ Φ_next`.
    pub fn regressors(&self) -> DMatrix<S> {
        &self.phi_prev - &self.phi_next * self.discount
    }
}

/// Basis-function coefficient vector defining a value-function approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct WeightVector<S: Scalar> {
    pub theta: DVector<S>,
}

impl<S: Scalar> WeightVector<S> {
    pub fn zeros(k: usize) -> Self {
        Self { theta: DVector::zeros(k) }
    }

    fn checked(theta: DVector<S>) -> Result<Self, EstimatorError> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        Ok(Self { theta })
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.len() == 0
    }
}

/// Errors-in-variables regression `Y = Xβ` observed through noisy `X'`, `Y'`,
/// with instrument columns `Z`.
#[derive(Debug, Clone)]
pub struct IvRegressionProblem<S: Scalar> {
    observed_x: DMatrix<S>,
    observed_y: DVector<S>,
    instruments: DMatrix<S>,
}

impl<S: Scalar> IvRegressionProblem<S> {
    pub fn new(
        observed_x: DMatrix<S>,
        observed_y: DVector<S>,
        instruments: DMatrix<S>,
    ) -> Result<Self, EstimatorError> {
        let (n, k) = observed_x.shape();
        if instruments.shape() != (n, k) {
            return Err(EstimatorError::ShapeMismatch(format!(
                "instruments are {}x{}, expected {}x{}",
                instruments.nrows(),
                instruments.ncols(),
                n,
                k
            )));
        }
        if observed_y.len() != n {
            return Err(EstimatorError::ShapeMismatch(format!(
                "{} responses for {} rows",
                observed_y.len(),
                n
            )));
        }
        if k > n {
            return Err(EstimatorError::ShapeMismatch(format!(
                "{} regressors exceed {} rows",
                k, n
            )));
        }
        Ok(Self { observed_x, observed_y, instruments })
    }

    pub fn observed_x(&self) -> &DMatrix<S> {
        &self.observed_x
    }

    pub fn observed_y(&self) -> &DVector<S> {
        &self.observed_y
    }

    pub fn instruments(&self) -> &DMatrix<S> {
        &self.instruments
    }
}

/// Knobs shared by the solvers. `ridge` is strictly opt-in: the default of
/// zero keeps singular systems an error instead of silently regularizing
/// them away (which would break the estimator-equivalence property).
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions<S: Scalar> {
    /// Override for the numerical-rank cutoff; `None` uses
    /// `max(n, k) · machine_eps · σ_max`.
    pub rank_tolerance: Option<S>,
    /// Tikhonov parameter added as `λ·I` to the solved system.
    pub ridge: S,
}

impl<S: Scalar> Default for SolverOptions<S> {
    fn default() -> Self {
        Self { rank_tolerance: None, ridge: S::zero() }
    }
}

fn default_rank_tol<S: Scalar>(nrows: usize, ncols: usize, sigma_max: S) -> S {
    S::of(nrows.max(ncols) as f64) * S::machine_eps() * sigma_max
}

struct SvdSolve<S: Scalar> {
    svd: nalgebra::SVD<S, nalgebra::Dyn, nalgebra::Dyn>,
    tol: S,
    cond: f64,
    rank: usize,
    ncols: usize,
}

/// SVD factorization with the rank cutoff resolved; shared by every solver.
fn factor<S: Scalar>(
    m: &DMatrix<S>,
    opts: &SolverOptions<S>,
) -> SvdSolve<S> {
    let (nrows, ncols) = m.shape();
    let svd = m.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    let tol = opts
        .rank_tolerance
        .unwrap_or_else(|| default_rank_tol(nrows, ncols, sigma_max));
    let cond = if sigma_min > S::zero() {
        (sigma_max / sigma_min).to_f64x()
    } else {
        f64::INFINITY
    };
    let rank = svd.rank(tol);
    SvdSolve { svd, tol, cond, rank, ncols }
}

impl<S: Scalar> SvdSolve<S> {
    fn require_full_rank(&self, name: &'static str) -> Result<(), EstimatorError> {
        if self.rank < self.ncols {
            return Err(EstimatorError::RankDeficient { matrix: name, condition: self.cond });
        }
        Ok(())
    }

    fn solve_vec(&self, rhs: &DVector<S>) -> Result<DVector<S>, EstimatorError> {
        let sol = self
            .svd
            .solve(rhs, self.tol)
            .map_err(|_| EstimatorError::NonFinite)?;
        Ok(DVector::from_column_slice(sol.as_slice()))
    }
}

fn with_ridge<S: Scalar>(mut m: DMatrix<S>, ridge: S) -> DMatrix<S> {
    if ridge > S::zero() {
        for i in 0..m.nrows().min(m.ncols()) {
            m[(i, i)] += ridge;
        }
    }
    m
}

/// Least-squares Bellman error minimization: `θ̂` minimizing
/// `‖C − (Φ_prev − γΦ_next) θ‖₂`.
pub fn solve_ls_bellman<S: Scalar>(
    inputs: &EstimatorInputs<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    solve_ls_bellman_with(inputs, &SolverOptions::default())
}

pub fn solve_ls_bellman_with<S: Scalar>(
    inputs: &EstimatorInputs<S>,
    opts: &SolverOptions<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    let a = inputs.regressors();
    if opts.ridge > S::zero() {
        // Augment with sqrt(λ)·I rows so the factorization path stays SVD.
        let (n, k) = a.shape();
        let mut aug = DMatrix::zeros(n + k, k);
        aug.view_mut((0, 0), (n, k)).copy_from(&a);
        let sqrt_ridge = opts.ridge.sqrt();
        for i in 0..k {
            aug[(n + i, i)] = sqrt_ridge;
        }
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(inputs.contributions());
        let f = factor(&aug, opts);
        f.require_full_rank("phi_prev - gamma*phi_next (ridged)")?;
        return WeightVector::checked(f.solve_vec(&rhs)?);
    }
    let f = factor(&a, opts);
    f.require_full_rank("phi_prev - gamma*phi_next")?;
    WeightVector::checked(f.solve_vec(inputs.contributions())?)
}

/// Instrumental-variables Bellman error minimization (LSTD):
/// `θ̂ = [Φ_prevᵀ(Φ_prev − γΦ_next)]⁻¹ Φ_prevᵀ C`, computed as a linear
/// solve. The `k×k` system may be indefinite, so the factorization makes no
/// positive-definiteness assumption.
pub fn solve_iv_bellman<S: Scalar>(
    inputs: &EstimatorInputs<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    solve_iv_bellman_with(inputs, &SolverOptions::default())
}

pub fn solve_iv_bellman_with<S: Scalar>(
    inputs: &EstimatorInputs<S>,
    opts: &SolverOptions<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    let a = inputs.regressors();
    let m = with_ridge(inputs.phi_prev().transpose() * a, opts.ridge);
    let rhs = inputs.phi_prev().transpose() * inputs.contributions();
    let f = factor(&m, opts);
    f.require_full_rank("phi_prev' * (phi_prev - gamma*phi_next)")?;
    WeightVector::checked(f.solve_vec(&rhs)?)
}

/// Applies the orthogonal projector onto the column space of `phi_prev` to
/// every column of `target`, through a thin SVD of `phi_prev`. The `n×n`
/// projection matrix is never materialized.
pub fn apply_projection<S: Scalar>(
    phi_prev: &DMatrix<S>,
    target: &DMatrix<S>,
) -> Result<DMatrix<S>, EstimatorError> {
    apply_projection_with(phi_prev, target, &SolverOptions::default())
}

pub fn apply_projection_with<S: Scalar>(
    phi_prev: &DMatrix<S>,
    target: &DMatrix<S>,
    opts: &SolverOptions<S>,
) -> Result<DMatrix<S>, EstimatorError> {
    if target.nrows() != phi_prev.nrows() {
        return Err(EstimatorError::ShapeMismatch(format!(
            "target has {} rows, phi_prev has {}",
            target.nrows(),
            phi_prev.nrows()
        )));
    }
    let f = factor(phi_prev, opts);
    f.require_full_rank("phi_prev")?;
    let u = f.svd.u.as_ref().expect("u requested");
    let basis = u.columns(0, f.rank);
    Ok(&basis * (basis.transpose() * target))
}

/// Least-squares projected Bellman error minimization: `θ̂` minimizing
/// `‖Π C − Π (Φ_prev − γΦ_next) θ‖₂` with Π the projector onto the span of
/// `Φ_prev`.
pub fn solve_ls_projected_bellman<S: Scalar>(
    inputs: &EstimatorInputs<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    solve_ls_projected_bellman_with(inputs, &SolverOptions::default())
}

pub fn solve_ls_projected_bellman_with<S: Scalar>(
    inputs: &EstimatorInputs<S>,
    opts: &SolverOptions<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    let (projected_a, projected_c) = project_system(inputs, opts)?;
    if opts.ridge > S::zero() {
        let m = with_ridge(projected_a.transpose() * &projected_a, opts.ridge);
        let rhs = projected_a.transpose() * projected_c;
        let f = factor(&m, opts);
        f.require_full_rank("projected normal matrix (ridged)")?;
        return WeightVector::checked(f.solve_vec(&rhs)?);
    }
    let f = factor(&projected_a, opts);
    f.require_full_rank("Pi * (phi_prev - gamma*phi_next)")?;
    WeightVector::checked(f.solve_vec(&projected_c)?)
}

/// Instrumental-variables projected Bellman error minimization:
/// `θ̂ = [Φ_prevᵀ Π (Φ_prev − γΦ_next)]⁻¹ Φ_prevᵀ Π C`.
pub fn solve_iv_projected_bellman<S: Scalar>(
    inputs: &EstimatorInputs<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    solve_iv_projected_bellman_with(inputs, &SolverOptions::default())
}

pub fn solve_iv_projected_bellman_with<S: Scalar>(
    inputs: &EstimatorInputs<S>,
    opts: &SolverOptions<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    let (projected_a, projected_c) = project_system(inputs, opts)?;
    let m = with_ridge(inputs.phi_prev().transpose() * projected_a, opts.ridge);
    let rhs = inputs.phi_prev().transpose() * projected_c;
    let f = factor(&m, opts);
    f.require_full_rank("phi_prev' * Pi * (phi_prev - gamma*phi_next)")?;
    WeightVector::checked(f.solve_vec(&rhs)?)
}

fn project_system<S: Scalar>(
    inputs: &EstimatorInputs<S>,
    opts: &SolverOptions<S>,
) -> Result<(DMatrix<S>, DVector<S>), EstimatorError> {
    let (n, k) = inputs.phi_prev().shape();
    // One joint projection of [A | C] so the factorization happens once.
    let mut stacked = DMatrix::zeros(n, k + 1);
    stacked.view_mut((0, 0), (n, k)).copy_from(&inputs.regressors());
    stacked.view_mut((0, k), (n, 1)).copy_from(inputs.contributions());
    let projected = apply_projection_with(inputs.phi_prev(), &stacked, opts)?;
    let projected_a = projected.view((0, 0), (n, k)).into_owned();
    let projected_c = DVector::from_column_slice(projected.column(k).as_slice());
    Ok((projected_a, projected_c))
}

/// Generic instrumental-variables regression: solves `Zᵀ X' β = Zᵀ Y'`.
pub fn solve_iv_regression<S: Scalar>(
    problem: &IvRegressionProblem<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    solve_iv_regression_with(problem, &SolverOptions::default())
}

pub fn solve_iv_regression_with<S: Scalar>(
    problem: &IvRegressionProblem<S>,
    opts: &SolverOptions<S>,
) -> Result<WeightVector<S>, EstimatorError> {
    let m = with_ridge(problem.instruments().transpose() * problem.observed_x(), opts.ridge);
    let rhs = problem.instruments().transpose() * problem.observed_y();
    let f = factor(&m, opts);
    f.require_full_rank("Z' * X'")?;
    WeightVector::checked(f.solve_vec(&rhs)?)
}

/// Rank/conditioning diagnostics of one matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRankInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
    pub condition: f64,
    pub smallest_singular_value: f64,
    pub full_rank: bool,
}

/// Diagnostics for the three matrices whose full column rank the estimators
/// assume: `Φ_prev`, `Φ_prev − γΦ_next` and `Φ_prevᵀ(Φ_prev − γΦ_next)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankReport {
    pub matrices: Vec<MatrixRankInfo>,
}

impl RankReport {
    pub fn all_full_rank(&self) -> bool {
        self.matrices.iter().all(|m| m.full_rank)
    }
}

pub fn check_rank_assumptions<S: Scalar>(
    inputs: &EstimatorInputs<S>,
    tolerance: Option<S>,
) -> RankReport {
    let a = inputs.regressors();
    let cross = inputs.phi_prev().transpose() * &a;
    let entries: [(&str, &DMatrix<S>); 3] = [
        ("phi_prev", inputs.phi_prev()),
        ("phi_prev - gamma*phi_next", &a),
        ("phi_prev' * (phi_prev - gamma*phi_next)", &cross),
    ];
    let opts = SolverOptions { rank_tolerance: tolerance, ridge: S::zero() };
    let matrices = entries
        .iter()
        .map(|(name, m)| {
            let f = factor(m, &opts);
            MatrixRankInfo {
                name: name.to_string(),
                rows: m.nrows(),
                cols: m.ncols(),
                rank: f.rank,
                condition: f.cond,
                smallest_singular_value: f.svd.singular_values.min().to_f64x(),
                full_rank: f.rank == m.ncols(),
            }
        })
        .collect();
    RankReport { matrices }
}

#[cfg(test)]
mod tests;
