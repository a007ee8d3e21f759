//! Derivative-free maximization utilities and the sequential search driver.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{kgcp, GpError, GpModel, Kernel};
use crate::scalar::Scalar;

/// `n` Latin-hypercube points in the box: one stratum per point and
/// dimension, independently permuted.
pub fn latin_hypercube<S: Scalar>(
    lower: &[S],
    upper: &[S],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<DVector<S>> {
    let d = lower.len();
    let mut strata: Vec<Vec<usize>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        strata.push(order);
    }
    (0..n)
        .map(|i| {
            DVector::from_fn(d, |dim, _| {
                let stratum = strata[dim][i] as f64;
                let u = S::sample_uniform(rng, S::zero(), S::one());
                let frac = (S::of(stratum) + u) / S::of(n as f64);
                lower[dim] + (upper[dim] - lower[dim]) * frac
            })
        })
        .collect()
}

/// Compass pattern search from `start`, maximizing `f` inside the box.
/// Deterministic; the step shrinks by half whenever no axis move improves,
/// until it drops below `step_floor` times the box width.
pub fn pattern_search<S: Scalar, F: FnMut(&DVector<S>) -> S>(
    lower: &[S],
    upper: &[S],
    start: DVector<S>,
    f: F,
) -> (DVector<S>, S) {
    pattern_search_with(lower, upper, start, S::of(0.25), S::of(1e-4), f)
}

pub fn pattern_search_with<S: Scalar, F: FnMut(&DVector<S>) -> S>(
    lower: &[S],
    upper: &[S],
    start: DVector<S>,
    initial_step: S,
    step_floor: S,
    mut f: F,
) -> (DVector<S>, S) {
    let d = lower.len();
    let widths: Vec<S> = (0..d).map(|i| upper[i] - lower[i]).collect();
    let mut steps: Vec<S> = widths.iter().map(|&w| w * initial_step).collect();
    let mut best = start;
    let mut best_value = f(&best);
    loop {
        let mut improved = false;
        for dim in 0..d {
            for sign in [S::one(), -S::one()] {
                let mut candidate = best.clone();
                candidate[dim] =
                    (candidate[dim] + sign * steps[dim]).clamp(lower[dim], upper[dim]);
                if candidate[dim] == best[dim] {
                    continue;
                }
                let value = f(&candidate);
                if value > best_value {
                    best_value = value;
                    best = candidate;
                    improved = true;
                }
            }
        }
        if !improved {
            let mut done = true;
            for dim in 0..d {
                steps[dim] *= S::of(0.5);
                if steps[dim] > widths[dim] * step_floor {
                    done = false;
                }
            }
            if done {
                return (best, best_value);
            }
        }
    }
}

/// Multi-start KGCP maximization, deterministic in `seed`: a dense
/// Latin-hypercube screen (the acquisition is sharply multimodal between
/// observed points), then pattern searches from the top screen scorers and
/// the observed points, then a fine polish from the incumbent.
pub fn maximize_kgcp<S: Scalar>(
    model: &mut GpModel<S>,
    restarts: usize,
    seed: u64,
) -> Result<(DVector<S>, S), GpError> {
    let (lower, upper) = model.bounds();
    let (lower, upper) = (lower.to_vec(), upper.to_vec());
    let restarts = restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eval = |model: &mut GpModel<S>, theta: &DVector<S>| {
        kgcp(model, theta).unwrap_or_else(|_| S::of(f64::NEG_INFINITY))
    };

    let screen = latin_hypercube(&lower, &upper, restarts * 32, &mut rng);
    let mut scored: Vec<(S, DVector<S>)> = screen
        .into_iter()
        .map(|theta| (eval(model, &theta), theta))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut starts: Vec<DVector<S>> =
        scored.into_iter().take(restarts).map(|(_, theta)| theta).collect();
    starts.extend(model.points().iter().cloned());

    let mut best: Option<(DVector<S>, S)> = None;
    for start in starts {
        let (point, value) = pattern_search_with(
            &lower,
            &upper,
            start,
            S::of(0.1),
            S::of(1e-4),
            |theta| eval(model, theta),
        );
        if best.as_ref().map_or(true, |(_, v)| value > *v) {
            best = Some((point, value));
        }
    }
    let (incumbent, _) = best.expect("at least one restart");
    let polished = pattern_search_with(
        &lower,
        &upper,
        incumbent,
        S::of(0.02),
        S::of(1e-6),
        |theta| eval(model, theta),
    );
    Ok(polished)
}

/// Maximum-likelihood kernel fit: coordinate pattern search over the log
/// hyperparameters (signal variance, per-dimension length scales, noise
/// variance), deterministic.
pub fn fit_kernel_mle<S: Scalar>(
    points: &[DVector<S>],
    observations: &[S],
    lower: &[S],
    upper: &[S],
    noise_hint: Option<S>,
) -> Result<Kernel<S>, GpError> {
    let d = lower.len();
    let n = observations.len();
    if n < 2 {
        return Err(GpError::Invalid("need at least two observations to fit a kernel".into()));
    }
    let mean = observations.iter().fold(S::zero(), |a, &y| a + y) / S::of(n as f64);
    let var = observations
        .iter()
        .fold(S::zero(), |a, &y| a + (y - mean) * (y - mean))
        / S::of(n as f64);
    let var = var.max(S::of(1e-12));
    // The likelihood is evaluated around the data mean so the signal
    // variance only has to explain fluctuations, not the offset.
    let centered: Vec<S> = observations.iter().map(|&y| y - mean).collect();

    let log_likelihood = |params: &DVector<S>| -> S {
        let kernel = Kernel {
            signal_var: params[0].exp(),
            length_scales: (0..d).map(|i| params[1 + i].exp()).collect(),
            noise_var: params[1 + d].exp(),
        };
        let mut model = match GpModel::with_data(
            lower.to_vec(),
            upper.to_vec(),
            kernel,
            points.to_vec(),
            centered.clone(),
        ) {
            Ok(m) => m,
            Err(_) => return S::of(f64::NEG_INFINITY),
        };
        model.log_marginal_likelihood().unwrap_or(S::of(f64::NEG_INFINITY))
    };

    // Search box in log space around data-driven initial values. The
    // likelihood surface is often bimodal in the noise/length-scale
    // trade-off, so several deterministic starts are searched.
    let mut lo = Vec::with_capacity(d + 2);
    let mut hi = Vec::with_capacity(d + 2);
    lo.push((var * S::of(1e-4)).ln());
    hi.push((var * S::of(1e3)).ln());
    for i in 0..d {
        let width = upper[i] - lower[i];
        lo.push((width * S::of(0.01)).ln());
        hi.push((width * S::of(10.0)).ln());
    }
    lo.push((var * S::of(1e-9)).ln());
    hi.push((var * S::of(10.0)).ln());

    let noise_init = noise_hint.filter(|v| *v > S::zero()).unwrap_or(var * S::of(0.1));
    let mut starts: Vec<Vec<S>> = Vec::new();
    for (ls_frac, noise) in [
        (0.3, noise_init),
        (0.15, var * S::of(1e-6)),
        (0.8, var * S::of(0.3)),
    ] {
        let mut s = Vec::with_capacity(d + 2);
        s.push(var.ln());
        for i in 0..d {
            s.push(((upper[i] - lower[i]) * S::of(ls_frac)).ln());
        }
        s.push(noise.ln().clamp(lo[d + 1], hi[d + 1]));
        starts.push(s);
    }

    let mut best: Option<(DVector<S>, S)> = None;
    for start in starts {
        let (point, value) =
            pattern_search(&lo, &hi, DVector::from_vec(start), &log_likelihood);
        if best.as_ref().map_or(true, |(_, v)| value > *v) {
            best = Some((point, value));
        }
    }
    let (best, _) = best.expect("at least one start");
    Ok(Kernel {
        signal_var: best[0].exp(),
        length_scales: (0..d).map(|i| best[1 + i].exp()).collect(),
        noise_var: best[1 + d].exp(),
    })
}

impl<S: Scalar> GpModel<S> {
    /// Log marginal likelihood of the current data under the current kernel.
    pub fn log_marginal_likelihood(&mut self) -> Result<S, GpError> {
        let n = self.len();
        if n == 0 {
            return Ok(S::zero());
        }
        let prior = self.prior_mean();
        let centered = DVector::from_fn(n, |i, _| self.observations()[i] - prior);
        let factor = self.factorize()?;
        let mut log_det = S::zero();
        let l = factor.chol.l_dirty();
        for i in 0..n {
            log_det += l[(i, i)].ln();
        }
        Ok(-centered.dot(&factor.alpha) / S::of(2.0)
            - log_det
            - S::of(n as f64) * S::of((2.0 * std::f64::consts::PI).ln() / 2.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Total simulation budget (including the initial design).
    pub budget: usize,
    /// Pattern-search restarts per KGCP maximization.
    pub restarts: usize,
    /// Refit kernel hyperparameters every this many observations.
    pub refit_every: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { budget: 50, restarts: 8, refit_every: 10, seed: 0 }
    }
}

/// One audited step of the sequential search.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct SearchStep<S: Scalar> {
    pub iteration: usize,
    pub theta: Vec<S>,
    pub observation: S,
    /// KGCP value of the chosen point (zero during the initial design).
    pub kgcp: S,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct SearchOutcome<S: Scalar> {
    /// Implementation decision: maximizer of the final posterior mean over
    /// the search box.
    pub best_theta: Vec<S>,
    pub posterior_mean_at_best: S,
    pub history: Vec<SearchStep<S>>,
}

impl<S: Scalar> SearchOutcome<S> {
    /// Audit CSV: `iteration,theta_0..theta_{d-1},observation,kgcp`.
    pub fn history_csv(&self) -> String {
        let d = self.best_theta.len();
        let mut out = String::from("iteration");
        for i in 0..d {
            out.push_str(&format!(",theta_{i}"));
        }
        out.push_str(",observation,kgcp\n");
        for step in &self.history {
            out.push_str(&step.iteration.to_string());
            for v in &step.theta {
                out.push_str(&format!(",{}", v.to_f64x()));
            }
            out.push_str(&format!(",{},{}\n", step.observation.to_f64x(), step.kgcp.to_f64x()));
        }
        out
    }
}

/// Sequential direct policy search: a Latin-hypercube initial design of
/// `2(d+1)` points, then KGCP-chosen samples until the budget is exhausted.
/// Kernel hyperparameters are fitted on the design and refitted every
/// `refit_every` observations. The outcome is the sampled point maximizing
/// the final posterior mean.
pub fn direct_policy_search<S, F>(
    mut objective: F,
    lower: Vec<S>,
    upper: Vec<S>,
    options: &SearchOptions,
) -> Result<SearchOutcome<S>, GpError>
where
    S: Scalar,
    F: FnMut(&DVector<S>) -> Result<S, String>,
{
    let d = lower.len();
    let design_size = 2 * (d + 1);
    if options.budget < design_size {
        return Err(GpError::Invalid(format!(
            "budget {} below the initial design size {design_size}",
            options.budget
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let design = latin_hypercube(&lower, &upper, design_size, &mut rng);

    let mut history = Vec::with_capacity(options.budget);
    let mut points = Vec::with_capacity(options.budget);
    let mut observations = Vec::with_capacity(options.budget);
    let mut evaluate = |theta: &DVector<S>| -> Result<S, GpError> {
        objective(theta).map_err(|message| GpError::Simulator {
            theta: theta.iter().map(|v| v.to_f64x()).collect(),
            message,
        })
    };
    for (i, theta) in design.into_iter().enumerate() {
        let y = evaluate(&theta)?;
        history.push(SearchStep {
            iteration: i,
            theta: theta.iter().copied().collect(),
            observation: y,
            kgcp: S::zero(),
        });
        points.push(theta);
        observations.push(y);
    }

    let mut kernel = fit_kernel_mle(&points, &observations, &lower, &upper, None)?;
    let mut model = GpModel::with_data(
        lower.clone(),
        upper.clone(),
        kernel.clone(),
        points.clone(),
        observations.clone(),
    )?;
    let trend = model.gls_prior_mean()?;
    model.set_prior_mean(trend);

    for iteration in design_size..options.budget {
        let (theta, kgcp_value) =
            maximize_kgcp(&mut model, options.restarts, options.seed ^ iteration as u64)?;
        let y = evaluate(&theta)?;
        history.push(SearchStep {
            iteration,
            theta: theta.iter().copied().collect(),
            observation: y,
            kgcp: kgcp_value,
        });
        points.push(theta.clone());
        observations.push(y);
        model.add_observation(theta, y)?;
        if (iteration + 1 - design_size) % options.refit_every == 0 {
            kernel = fit_kernel_mle(&points, &observations, &lower, &upper, Some(kernel.noise_var))?;
            model.set_kernel(kernel.clone())?;
            let trend = model.gls_prior_mean()?;
            model.set_prior_mean(trend);
        }
    }

    // Implementation decision: maximize the final posterior mean over the
    // box, starting from the sampled points and fresh space-filling seeds.
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x5ea7c4);
    let mut starts = latin_hypercube(&lower, &upper, 8, &mut rng);
    starts.extend(points.iter().cloned());
    let mut best: Option<(DVector<S>, S)> = None;
    for start in starts {
        let (point, value) = pattern_search(&lower, &upper, start, |theta| {
            model
                .posterior_mean(theta)
                .unwrap_or_else(|_| S::of(f64::NEG_INFINITY))
        });
        if best.as_ref().map_or(true, |(_, v)| value > *v) {
            best = Some((point, value));
        }
    }
    let (best_theta, posterior_mean_at_best) = best.expect("nonempty starts");
    Ok(SearchOutcome {
        best_theta: best_theta.iter().copied().collect(),
        posterior_mean_at_best,
        history,
    })
}
