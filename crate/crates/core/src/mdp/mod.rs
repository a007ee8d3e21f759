//! Post-decision-state MDP machinery.
//!
//! [`Mdp`] is the behavioral contract a problem implements: sample an
//! exploration post-state, realize the exogenous transition, enumerate
//! feasible actions, apply one deterministically, and price it. On top of it
//! sit quadratic feature bases ([`BasisSpec`]), greedy policies, off-policy
//! sample collection, the approximate-policy-iteration loop ([`api_loop`])
//! and discounted policy simulation.
//!
//! Everything that takes randomness takes a seeded `ChaCha8Rng` (or a seed
//! plus stream index), so every operation is a pure function of its inputs.

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    solve_iv_bellman_with, solve_iv_projected_bellman_with, solve_ls_bellman_with,
    solve_ls_projected_bellman_with, EstimatorError, EstimatorInputs, SolverOptions,
    WeightVector,
};
use crate::scalar::Scalar;

/// Behavioral contract of a steady-state control problem around
/// post-decision states.
pub trait Mdp<S: Scalar> {
    type PreState: Clone + Send + Sync;
    type PostState: Clone + Send + Sync;
    type Action: Clone + Send + Sync;

    /// Number of post-state coordinates exposed to feature bases.
    fn post_dim(&self) -> usize;

    /// Writes the post-state coordinates into `buf` (length `post_dim`).
    fn post_coords_into(&self, post: &Self::PostState, buf: &mut [S]);

    /// Draws from the off-policy exploration distribution (i.i.d. across
    /// calls, independent of any policy).
    fn sample_post_state(&self, rng: &mut ChaCha8Rng) -> Self::PostState;

    /// Draws a start state for policy evaluation.
    fn sample_start_state(&self, rng: &mut ChaCha8Rng) -> Self::PreState;

    /// Realizes the exogenous information arriving after a post-state.
    fn exogenous_step(&self, post: &Self::PostState, rng: &mut ChaCha8Rng) -> Self::PreState;

    /// Finite, nonempty action set at a reachable pre-state.
    fn feasible_actions(&self, pre: &Self::PreState) -> Vec<Self::Action>;

    /// Deterministic transition to the post-decision state.
    fn apply_action(&self, pre: &Self::PreState, action: &Self::Action) -> Self::PostState;

    /// Immediate dollar contribution of an action.
    fn contribution(&self, pre: &Self::PreState, action: &Self::Action) -> S;
}

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("no feasible action at the visited state")]
    NoFeasibleAction,
    #[error("state exposes {found} coordinates but the basis selects dimension {requested}")]
    DimensionMismatch { requested: usize, found: usize },
    #[error("invalid basis: {0}")]
    InvalidBasis(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisDegree {
    Linear,
    Quadratic,
}

/// Polynomial feature basis over scaled post-state coordinates: a constant,
/// the selected coordinates mapped affinely to `[0, 1]`, and (for the
/// quadratic degree) all products of pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct BasisSpec<S: Scalar> {
    /// Indices of the post-state coordinates that participate.
    pub selected_dims: Vec<usize>,
    pub degree: BasisDegree,
    /// Per selected dimension: (lower, upper) bounds of the affine map to
    /// `[0, 1]`. Bounds come from the problem, not from data.
    pub scaling: Vec<(S, S)>,
}

impl<S: Scalar> BasisSpec<S> {
    pub fn new(
        selected_dims: Vec<usize>,
        degree: BasisDegree,
        scaling: Vec<(S, S)>,
    ) -> Result<Self, MdpError> {
        if selected_dims.len() != scaling.len() {
            return Err(MdpError::InvalidBasis(format!(
                "{} selected dimensions but {} scaling intervals",
                selected_dims.len(),
                scaling.len()
            )));
        }
        for &(lo, hi) in &scaling {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(MdpError::InvalidBasis(format!(
                    "scaling interval [{}, {}] must be finite with lower < upper",
                    lo.to_f64x(),
                    hi.to_f64x()
                )));
            }
        }
        let mut seen = selected_dims.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != selected_dims.len() {
            return Err(MdpError::InvalidBasis("duplicate selected dimension".into()));
        }
        Ok(Self { selected_dims, degree, scaling })
    }

    /// `1 + d` features for the linear degree, `1 + d + d(d+1)/2` for the
    /// quadratic one.
    pub fn feature_count(&self) -> usize {
        let d = self.selected_dims.len();
        match self.degree {
            BasisDegree::Linear => 1 + d,
            BasisDegree::Quadratic => 1 + d + d * (d + 1) / 2,
        }
    }

    /// Evaluates `[1, s̃_i…, s̃_i s̃_j (i≤j)…]` over the scaled selected
    /// coordinates.
    pub fn evaluate(&self, coords: &[S]) -> Result<DVector<S>, MdpError> {
        let d = self.selected_dims.len();
        let mut scaled = Vec::with_capacity(d);
        for (slot, &dim) in self.selected_dims.iter().enumerate() {
            let &value = coords
                .get(dim)
                .ok_or(MdpError::DimensionMismatch { requested: dim, found: coords.len() })?;
            let (lo, hi) = self.scaling[slot];
            scaled.push((value - lo) / (hi - lo));
        }
        let mut features = DVector::zeros(self.feature_count());
        features[0] = S::one();
        for i in 0..d {
            features[1 + i] = scaled[i];
        }
        if self.degree == BasisDegree::Quadratic {
            let mut idx = 1 + d;
            for i in 0..d {
                for j in i..d {
                    features[idx] = scaled[i] * scaled[j];
                    idx += 1;
                }
            }
        }
        Ok(features)
    }
}

/// A greedy policy: pick the feasible action maximizing the one-step
/// contribution plus the discounted post-state value approximation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct GreedyPolicy<S: Scalar> {
    pub weights: WeightVector<S>,
    pub basis: BasisSpec<S>,
    pub discount: S,
}

impl<S: Scalar> GreedyPolicy<S> {
    pub fn new(
        weights: WeightVector<S>,
        basis: BasisSpec<S>,
        discount: S,
    ) -> Result<Self, MdpError> {
        if weights.len() != basis.feature_count() {
            return Err(MdpError::InvalidConfig(format!(
                "{} weights for {} basis features",
                weights.len(),
                basis.feature_count()
            )));
        }
        Ok(Self { weights, basis, discount })
    }

    /// Approximate value of a post-state.
    pub fn post_value<M: Mdp<S>>(
        &self,
        mdp: &M,
        post: &M::PostState,
        buf: &mut Vec<S>,
    ) -> Result<S, MdpError> {
        buf.resize(mdp.post_dim(), S::zero());
        mdp.post_coords_into(post, buf);
        let features = self.basis.evaluate(buf)?;
        Ok(features.dot(&self.weights.theta))
    }
}

/// The zero-weight policy: pure one-step contribution maximization.
pub fn myopic_policy<S: Scalar>(basis: BasisSpec<S>, discount: S) -> GreedyPolicy<S> {
    let weights = WeightVector::zeros(basis.feature_count());
    GreedyPolicy { weights, basis, discount }
}

/// Greedy action at a pre-state: maximizes `C(s, x) + γ θᵀφ(post)` over the
/// feasible actions, ties to the lowest action index.
pub fn greedy_action<S: Scalar, M: Mdp<S>>(
    policy: &GreedyPolicy<S>,
    mdp: &M,
    pre: &M::PreState,
) -> Result<(usize, M::Action), MdpError> {
    let actions = mdp.feasible_actions(pre);
    if actions.is_empty() {
        return Err(MdpError::NoFeasibleAction);
    }
    let mut buf = Vec::new();
    let mut best_idx = 0usize;
    let mut best_value = S::of(f64::NEG_INFINITY);
    for (i, action) in actions.iter().enumerate() {
        let post = mdp.apply_action(pre, action);
        let value = mdp.contribution(pre, action)
            + policy.discount * policy.post_value(mdp, &post, &mut buf)?;
        if value > best_value {
            best_value = value;
            best_idx = i;
        }
    }
    Ok((best_idx, actions.into_iter().nth(best_idx).unwrap()))
}

/// Off-policy sample collection: for each of `n` rows, draw an exploration
/// post-state, record its features, realize the exogenous step, act
/// greedily, and record the contribution and the successor post-state
/// features. Rows are index-aligned.
pub fn collect_samples<S: Scalar, M: Mdp<S>>(
    policy: &GreedyPolicy<S>,
    mdp: &M,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EstimatorInputs<S>, MdpError> {
    if n == 0 {
        return Err(MdpError::InvalidConfig("sample count must be at least 1".into()));
    }
    let k = policy.basis.feature_count();
    let mut phi_prev = DMatrix::zeros(n, k);
    let mut phi_next = DMatrix::zeros(n, k);
    let mut contributions = DVector::zeros(n);
    let mut buf = Vec::new();
    for i in 0..n {
        let post_prev = mdp.sample_post_state(rng);
        buf.resize(mdp.post_dim(), S::zero());
        mdp.post_coords_into(&post_prev, &mut buf);
        phi_prev.row_mut(i).copy_from(&policy.basis.evaluate(&buf)?.transpose());

        let pre = mdp.exogenous_step(&post_prev, rng);
        let (_, action) = greedy_action(policy, mdp, &pre)?;
        contributions[i] = mdp.contribution(&pre, &action);

        let post_next = mdp.apply_action(&pre, &action);
        buf.resize(mdp.post_dim(), S::zero());
        mdp.post_coords_into(&post_next, &mut buf);
        phi_next.row_mut(i).copy_from(&policy.basis.evaluate(&buf)?.transpose());
    }
    EstimatorInputs::new(phi_prev, phi_next, contributions, policy.discount)
        .map_err(|e| MdpError::InvalidConfig(e.to_string()))
}

/// Which Bellman-error estimator the policy-evaluation step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimatorKind {
    LeastSquares,
    InstrumentalVariables,
    LsProjected,
    IvProjected,
}

impl EstimatorKind {
    pub fn solve<S: Scalar>(
        &self,
        inputs: &EstimatorInputs<S>,
        opts: &SolverOptions<S>,
    ) -> Result<WeightVector<S>, EstimatorError> {
        match self {
            Self::LeastSquares => solve_ls_bellman_with(inputs, opts),
            Self::InstrumentalVariables => solve_iv_bellman_with(inputs, opts),
            Self::LsProjected => solve_ls_projected_bellman_with(inputs, opts),
            Self::IvProjected => solve_iv_projected_bellman_with(inputs, opts),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::LeastSquares => "ls",
            Self::InstrumentalVariables => "iv",
            Self::LsProjected => "ls-projected",
            Self::IvProjected => "iv-projected",
        }
    }
}

/// Approximate-policy-iteration configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ApiConfig<S: Scalar> {
    /// Policy-improvement iterations (M).
    pub policy_iterations: usize,
    /// Policy-evaluation samples per iteration (N).
    pub samples_per_iteration: usize,
    pub estimator: EstimatorKind,
    pub discount: S,
    pub seed: u64,
    #[serde(skip)]
    pub solver: SolverOptions<S>,
}

/// Result of the API loop: the final policy plus the weight trajectory for
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ApiOutcome<S: Scalar> {
    pub policy: GreedyPolicy<S>,
    pub theta_trajectory: Vec<DVector<S>>,
}

#[derive(Debug, Error)]
pub enum ApiFailure {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Loop abort: reports the failing iteration and the last valid weights.
#[derive(Debug, Error)]
#[error("estimator failed at policy iteration {iteration}: {failure}")]
pub struct ApiError<S: Scalar> {
    pub iteration: usize,
    pub failure: ApiFailure,
    pub last_valid: ApiOutcome<S>,
}

/// Approximate policy iteration: starting from zero weights (the myopic
/// policy), alternate off-policy sample collection under the current greedy
/// policy with one estimator solve, `M` times. Fresh samples are drawn every
/// improvement iteration.
pub fn api_loop<S: Scalar, M: Mdp<S>>(
    config: &ApiConfig<S>,
    mdp: &M,
    basis: &BasisSpec<S>,
) -> Result<ApiOutcome<S>, Box<ApiError<S>>> {
    let validation_err = |msg: String| {
        Box::new(ApiError {
            iteration: 0,
            failure: ApiFailure::Mdp(MdpError::InvalidConfig(msg)),
            last_valid: ApiOutcome {
                policy: myopic_policy(basis.clone(), config.discount),
                theta_trajectory: vec![],
            },
        })
    };
    if config.policy_iterations == 0 {
        return Err(validation_err("policy_iterations must be at least 1".into()));
    }
    if config.samples_per_iteration < basis.feature_count() {
        return Err(validation_err(format!(
            "{} samples per iteration cannot identify {} basis weights",
            config.samples_per_iteration,
            basis.feature_count()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = myopic_policy(basis.clone(), config.discount);
    let mut trajectory = Vec::with_capacity(config.policy_iterations);
    for iteration in 1..=config.policy_iterations {
        let attempt = collect_samples(&policy, mdp, config.samples_per_iteration, &mut rng)
            .map_err(ApiFailure::from)
            .and_then(|inputs| {
                config.estimator.solve(&inputs, &config.solver).map_err(ApiFailure::from)
            });
        match attempt {
            Ok(weights) => {
                trajectory.push(weights.theta.clone());
                policy = GreedyPolicy { weights, basis: basis.clone(), discount: config.discount };
            }
            Err(failure) => {
                return Err(Box::new(ApiError {
                    iteration,
                    failure,
                    last_valid: ApiOutcome { policy, theta_trajectory: trajectory },
                }));
            }
        }
    }
    Ok(ApiOutcome { policy, theta_trajectory: trajectory })
}

/// Start-state source for policy simulation.
pub enum StartStates<P> {
    /// Draw from the problem's start distribution, one per path.
    Sampled,
    /// Evaluate on exactly these states (one path each).
    Fixed(Vec<P>),
}

#[derive(Debug, Clone)]
pub struct SimulationResult<S: Scalar> {
    /// Discounted `T`-step return of each path.
    pub returns: Vec<S>,
    /// Largest absolute one-step contribution observed.
    pub max_abs_contribution: S,
    /// Set when `γ^T · C_max / (1 − γ)` exceeds the requested tolerance.
    pub truncation_warning: bool,
}

/// Simulates the discounted finite-horizon value of a greedy policy over
/// independent paths. Path `i` draws from a dedicated rng stream
/// `(seed, i)`, so any subset of paths reproduces bit-for-bit; policies
/// consume no randomness, which keeps the exogenous realizations identical
/// across policies evaluated with the same seed.
pub fn simulate_policy_value<S: Scalar, M: Mdp<S>>(
    policy: &GreedyPolicy<S>,
    mdp: &M,
    horizon: usize,
    n_paths: usize,
    seed: u64,
    start: StartStates<M::PreState>,
    truncation_tol: S,
) -> Result<SimulationResult<S>, MdpError> {
    if horizon == 0 {
        return Err(MdpError::InvalidConfig("horizon must be at least 1".into()));
    }
    let starts: Vec<M::PreState> = match start {
        StartStates::Fixed(states) => states,
        StartStates::Sampled => (0..n_paths)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(start_stream(i));
                mdp.sample_start_state(&mut rng)
            })
            .collect(),
    };
    let mut returns = Vec::with_capacity(starts.len());
    let mut max_abs = S::zero();
    for (i, start_state) in starts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_stream(i));
        let mut pre = start_state.clone();
        let mut total = S::zero();
        let mut discount_pow = S::one();
        for _ in 0..horizon {
            let (_, action) = greedy_action(policy, mdp, &pre)?;
            let c = mdp.contribution(&pre, &action);
            max_abs = max_abs.max(c.abs());
            total += discount_pow * c;
            discount_pow *= policy.discount;
            let post = mdp.apply_action(&pre, &action);
            pre = mdp.exogenous_step(&post, &mut rng);
        }
        returns.push(total);
    }
    let tail = if policy.discount > S::zero() {
        policy.discount.powi(horizon as i32) * max_abs / (S::one() - policy.discount)
    } else {
        S::zero()
    };
    Ok(SimulationResult {
        returns,
        max_abs_contribution: max_abs,
        truncation_warning: tail > truncation_tol,
    })
}

/// Stream id for drawing path `i`'s start state.
pub fn start_stream(i: usize) -> u64 {
    (1u64 << 40) + i as u64
}

/// Stream id for path `i`'s exogenous realization.
pub fn path_stream(i: usize) -> u64 {
    (2u64 << 40) + i as u64
}

#[cfg(test)]
mod tests;
