//! Direct policy search over low-dimensional weight vectors.
//!
//! A Gaussian-process surrogate ([`GpModel`], squared-exponential kernel
//! with per-dimension length scales) models the simulated policy value. The
//! knowledge gradient for continuous parameters ([`kgcp`]) scores a
//! candidate by the expected increase in the maximum posterior mean over the
//! sampled points after one more (noisy) observation there; it has a closed
//! form as the expectation of a maximum of lines in a standard normal
//! variable. [`direct_policy_search`] runs a Latin-hypercube initial design
//! and then sequentially samples the KGCP maximizer until the simulation
//! budget is exhausted.

pub mod optimize;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid gaussian process input: {0}")]
    Invalid(String),
    #[error("kernel matrix is not positive definite even after jitter")]
    IllConditionedKernel,
    #[error("simulator failed at theta {theta:?}: {message}")]
    Simulator { theta: Vec<f64>, message: String },
}

/// Squared-exponential kernel hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct Kernel<S: Scalar> {
    pub signal_var: S,
    pub length_scales: Vec<S>,
    pub noise_var: S,
}

impl<S: Scalar> Kernel<S> {
    pub fn validate(&self, dim: usize) -> Result<(), GpError> {
        if self.length_scales.len() != dim {
            return Err(GpError::Invalid(format!(
                "{} length scales for dimension {dim}",
                self.length_scales.len()
            )));
        }
        if !(self.signal_var > S::zero()) || self.length_scales.iter().any(|l| !(*l > S::zero()))
        {
            return Err(GpError::Invalid("kernel scales must be positive".into()));
        }
        if self.noise_var < S::zero() {
            return Err(GpError::Invalid("noise variance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn eval(&self, a: &DVector<S>, b: &DVector<S>) -> S {
        let mut dist = S::zero();
        for i in 0..a.len() {
            let d = (a[i] - b[i]) / self.length_scales[i];
            dist += d * d;
        }
        self.signal_var * (-dist / S::of(2.0)).exp()
    }
}

/// Gaussian-process posterior over a box-bounded parameter space, with at
/// most three dimensions.
#[derive(Debug, Clone)]
pub struct GpModel<S: Scalar> {
    points: Vec<DVector<S>>,
    observations: Vec<S>,
    kernel: Kernel<S>,
    lower: Vec<S>,
    upper: Vec<S>,
    /// Fixed prior mean. Kept constant across updates so the one-step
    /// posterior-update algebra in [`kgcp`] is exact.
    prior_mean: S,
    factor: Option<GpFactor<S>>,
}

#[derive(Debug, Clone)]
struct GpFactor<S: Scalar> {
    chol: Cholesky<S, Dyn>,
    /// `K⁻¹ (y − μ₀)`.
    alpha: DVector<S>,
    /// Noise-free training kernel matrix.
    train_k: DMatrix<S>,
    prior_mean: S,
    jitter: S,
}

impl<S: Scalar> GpModel<S> {
    pub fn new(
        lower: Vec<S>,
        upper: Vec<S>,
        kernel: Kernel<S>,
    ) -> Result<Self, GpError> {
        let d = lower.len();
        if d == 0 || d > 3 {
            return Err(GpError::Invalid(format!(
                "search dimension {d} outside the supported range 1..=3"
            )));
        }
        if upper.len() != d || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(GpError::Invalid("search box must have lower < upper per dimension".into()));
        }
        kernel.validate(d)?;
        Ok(Self {
            points: Vec::new(),
            observations: Vec::new(),
            kernel,
            lower,
            upper,
            prior_mean: S::zero(),
            factor: None,
        })
    }

    pub fn with_data(
        lower: Vec<S>,
        upper: Vec<S>,
        kernel: Kernel<S>,
        points: Vec<DVector<S>>,
        observations: Vec<S>,
    ) -> Result<Self, GpError> {
        let mut model = Self::new(lower, upper, kernel)?;
        if points.len() != observations.len() {
            return Err(GpError::Invalid("points/observations length mismatch".into()));
        }
        for (p, y) in points.into_iter().zip(observations) {
            model.add_observation(p, y)?;
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<S>] {
        &self.points
    }

    pub fn observations(&self) -> &[S] {
        &self.observations
    }

    pub fn kernel(&self) -> &Kernel<S> {
        &self.kernel
    }

    pub fn bounds(&self) -> (&[S], &[S]) {
        (&self.lower, &self.upper)
    }

    pub fn in_box(&self, theta: &DVector<S>) -> bool {
        theta.len() == self.dim()
            && (0..self.dim()).all(|i| theta[i] >= self.lower[i] && theta[i] <= self.upper[i])
    }

    pub fn prior_mean(&self) -> S {
        self.prior_mean
    }

    pub fn set_prior_mean(&mut self, mean: S) {
        self.prior_mean = mean;
        self.factor = None;
    }

    pub fn add_observation(&mut self, theta: DVector<S>, y: S) -> Result<(), GpError> {
        if theta.len() != self.dim() {
            return Err(GpError::Invalid(format!(
                "point dimension {} for model dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        if !y.is_finite() {
            return Err(GpError::Invalid("non-finite observation".into()));
        }
        self.points.push(theta);
        self.observations.push(y);
        self.factor = None;
        Ok(())
    }

    pub fn set_kernel(&mut self, kernel: Kernel<S>) -> Result<(), GpError> {
        kernel.validate(self.dim())?;
        self.kernel = kernel;
        self.factor = None;
        Ok(())
    }

    /// Cholesky factor of `K + σ_n² I`, escalating a diagonal jitter
    /// (relative to the signal variance) only when the plain factorization
    /// fails.
    fn factorize(&mut self) -> Result<&GpFactor<S>, GpError> {
        if self.factor.is_none() {
            let n = self.points.len();
            let mut base = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let k = self.kernel.eval(&self.points[i], &self.points[j]);
                    base[(i, j)] = k;
                    base[(j, i)] = k;
                }
            }
            for i in 0..n {
                base[(i, i)] += self.kernel.noise_var;
            }
            let mut factor = None;
            for jitter_rel in [0.0, 1e-8, 1e-6, 1e-4] {
                let jitter = self.kernel.signal_var * S::of(jitter_rel);
                let mut k = base.clone();
                for i in 0..n {
                    k[(i, i)] += jitter;
                }
                if let Some(chol) = k.cholesky() {
                    let prior_mean = self.prior_mean();
                    let centered = DVector::from_fn(n, |i, _| self.observations[i] - prior_mean);
                    let alpha = chol.solve(&centered);
                    let mut train_k = base.clone();
                    for i in 0..n {
                        train_k[(i, i)] -= self.kernel.noise_var;
                    }
                    factor = Some(GpFactor { chol, alpha, train_k, prior_mean, jitter });
                    break;
                }
            }
            self.factor = Some(factor.ok_or(GpError::IllConditionedKernel)?);
        }
        Ok(self.factor.as_ref().unwrap())
    }

    /// Posterior mean and covariance at the query points.
    pub fn posterior(
        &mut self,
        queries: &[DVector<S>],
    ) -> Result<(DVector<S>, DMatrix<S>), GpError> {
        let m = queries.len();
        if self.points.is_empty() {
            let mean = DVector::from_element(m, self.prior_mean());
            let mut cov = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let k = self.kernel.eval(&queries[i], &queries[j]);
                    cov[(i, j)] = k;
                    cov[(j, i)] = k;
                }
            }
            return Ok((mean, cov));
        }
        let kernel = self.kernel.clone();
        let points = self.points.clone();
        let factor = self.factorize()?;
        let n = points.len();
        let mut cross = DMatrix::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                cross[(i, j)] = kernel.eval(&points[i], &queries[j]);
            }
        }
        let mean = DVector::from_fn(m, |j, _| {
            factor.prior_mean + cross.column(j).dot(&factor.alpha)
        });
        let solved = factor.chol.solve(&cross);
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let k = kernel.eval(&queries[i], &queries[j])
                    - cross.column(i).dot(&solved.column(j));
                cov[(i, j)] = k;
                cov[(j, i)] = k;
            }
        }
        Ok((mean, cov))
    }

    /// Posterior mean at a single point.
    pub fn posterior_mean(&mut self, query: &DVector<S>) -> Result<S, GpError> {
        Ok(self.posterior(std::slice::from_ref(query))?.0[0])
    }

    /// Generalized-least-squares estimate of a constant prior mean under the
    /// current kernel: `(1ᵀK⁻¹y) / (1ᵀK⁻¹1)`.
    pub fn gls_prior_mean(&mut self) -> Result<S, GpError> {
        let n = self.len();
        if n == 0 {
            return Ok(self.prior_mean);
        }
        let y = DVector::from_fn(n, |i, _| self.observations[i]);
        let ones = DVector::from_element(n, S::one());
        let current = self.prior_mean;
        let factor = self.factorize()?;
        let kinv_y = factor.chol.solve(&y);
        let kinv_ones = factor.chol.solve(&ones);
        let denom = ones.dot(&kinv_ones);
        if !(denom > S::zero()) {
            return Ok(current);
        }
        Ok(ones.dot(&kinv_y) / denom)
    }
}

/// Knowledge gradient for continuous parameters at `candidate`: the expected
/// one-step increase of `max_i μ(θ^i)` over the observed points plus the
/// candidate, if the next (noisy) observation were taken at the candidate.
/// Exact via the piecewise-linear expectation; never negative.
pub fn kgcp<S: Scalar>(model: &mut GpModel<S>, candidate: &DVector<S>) -> Result<S, GpError> {
    if candidate.len() != model.dim() {
        return Err(GpError::Invalid(format!(
            "candidate dimension {} for model dimension {}",
            candidate.len(),
            model.dim()
        )));
    }
    let n = model.points.len();
    let kernel = model.kernel.clone();
    if n == 0 {
        return Ok(S::zero());
    }
    let points = model.points.clone();
    let factor = model.factorize()?;

    // Posterior means at observed points and at the candidate.
    let k_cand = DVector::from_fn(n, |i, _| kernel.eval(&points[i], candidate));
    let w = factor.chol.solve(&k_cand);
    let mut a = Vec::with_capacity(n + 1);
    for i in 0..n {
        a.push(factor.prior_mean + factor.train_k.row(i).transpose().dot(&factor.alpha));
    }
    a.push(factor.prior_mean + k_cand.dot(&factor.alpha));

    // Update coefficients: posterior cov of each point with the candidate,
    // normalized by the predictive standard deviation at the candidate.
    let var_cand = kernel.eval(candidate, candidate) - k_cand.dot(&w);
    let predictive = var_cand + kernel.noise_var + factor.jitter;
    if !(predictive > S::zero()) {
        return Ok(S::zero());
    }
    let denom = predictive.sqrt();
    let mut b = Vec::with_capacity(n + 1);
    for i in 0..n {
        let cov = k_cand[i] - factor.train_k.row(i).transpose().dot(&w);
        b.push(cov / denom);
    }
    b.push(var_cand.max(S::zero()) / denom);

    let value = expected_max_of_lines(&a, &b) - a.iter().fold(S::of(f64::NEG_INFINITY), |m, &x| m.max(x));
    Ok(value.max(S::zero()))
}

/// `E[max_i (a_i + b_i Z)]` for standard normal `Z`, by upper-envelope
/// decomposition.
fn expected_max_of_lines<S: Scalar>(a: &[S], b: &[S]) -> S {
    // Sort by slope; for equal slopes only the largest intercept matters.
    let mut lines: Vec<(S, S)> = a.iter().copied().zip(b.iter().copied()).collect();
    lines.sort_by(|x, y| {
        x.1.partial_cmp(&y.1)
            .unwrap()
            .then(x.0.partial_cmp(&y.0).unwrap())
    });
    let mut dedup: Vec<(S, S)> = Vec::with_capacity(lines.len());
    for line in lines {
        if let Some(last) = dedup.last() {
            if line.1 == last.1 {
                // Same slope: keep the larger intercept (it dominates).
                if line.0 > last.0 {
                    dedup.pop();
                } else {
                    continue;
                }
            }
        }
        dedup.push(line);
    }

    // Upper envelope: stack of (intercept, slope, left breakpoint).
    let mut stack: Vec<(S, S, S)> = Vec::with_capacity(dedup.len());
    for &(ai, bi) in &dedup {
        let mut left = S::of(f64::NEG_INFINITY);
        while let Some(&(a_top, b_top, left_top)) = stack.last() {
            // Intersection with the top line; bi > b_top after dedup.
            let z = (a_top - ai) / (bi - b_top);
            if z <= left_top {
                stack.pop();
            } else {
                left = z;
                break;
            }
        }
        if stack.is_empty() {
            left = S::of(f64::NEG_INFINITY);
        }
        stack.push((ai, bi, left));
    }

    let mut total = S::zero();
    for (idx, &(ai, bi, left)) in stack.iter().enumerate() {
        let right = if idx + 1 < stack.len() {
            stack[idx + 1].2
        } else {
            S::of(f64::INFINITY)
        };
        let (cdf_l, pdf_l) = cdf_pdf(left);
        let (cdf_r, pdf_r) = cdf_pdf(right);
        total += ai * (cdf_r - cdf_l) + bi * (pdf_l - pdf_r);
    }
    total
}

fn cdf_pdf<S: Scalar>(z: S) -> (S, S) {
    if z == S::of(f64::NEG_INFINITY) {
        (S::zero(), S::zero())
    } else if z == S::of(f64::INFINITY) {
        (S::one(), S::zero())
    } else {
        (z.std_normal_cdf(), z.std_normal_pdf())
    }
}

pub use optimize::{
    direct_policy_search, fit_kernel_mle, latin_hypercube, maximize_kgcp, pattern_search,
    pattern_search_with,
    SearchOptions, SearchOutcome, SearchStep,
};
