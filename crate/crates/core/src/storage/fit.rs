//! Model calibration from time series.
//!
//! * [`fit_ar1`] — Yule-Walker AR(1) fit (lag-1 autocorrelation of the
//!   de-meaned series).
//! * [`fit_jump_diffusion`] — jump identification by the three-sigma return
//!   rule, then least squares for the mean-reversion parameters on the
//!   non-jump returns.
//! * [`fit_seasonals`] — hour-of-week and month-of-year bucket means with an
//!   identifiable centering (the hour table carries the grand mean, the
//!   month table is zero-mean).
//! * [`fit_demand_polynomial`] — degree-5 least-squares fit of the
//!   deseasonalized load against temperature.
//!
//! Whole-model helpers ([`fit_wind_model`], [`fit_price_model`],
//! [`fit_demand_model`]) wire these together for the CLI.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::models::{DemandModel, PriceModel, SeasonIndex, WindModel};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("seasonal bucket {kind} {index} has no observations")]
    EmptyBucket { kind: &'static str, index: usize },
    #[error("rank-deficient regression: {0}")]
    RankDeficient(String),
    #[error("series length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// AR(1) parameters recovered from a series.
#[derive(Debug, Clone, Copy)]
pub struct Ar1Fit<S: Scalar> {
    pub mean: S,
    pub phi: S,
    pub noise_sd: S,
}

/// Yule-Walker AR(1) fit: `phi` is the lag-1 autocorrelation of the de-meaned
/// series and the innovation variance is `(1 - phi^2)` times the sample
/// variance.
pub fn fit_ar1<S: Scalar>(series: &[S]) -> Result<Ar1Fit<S>, FitError> {
    let n = series.len();
    if n < 3 {
        return Err(FitError::DegenerateSeries(format!("{n} observations, need at least 3")));
    }
    let nf = S::of(n as f64);
    let mean = series.iter().fold(S::zero(), |a, &x| a + x) / nf;
    let mut var = S::zero();
    let mut cov = S::zero();
    for i in 0..n {
        let d = series[i] - mean;
        var += d * d;
        if i + 1 < n {
            cov += d * (series[i + 1] - mean);
        }
    }
    var /= nf;
    cov /= nf;
    if var <= S::machine_eps() * (mean * mean + S::one()) {
        return Err(FitError::DegenerateSeries("constant series".into()));
    }
    let phi = cov / var;
    let noise_var = (S::one() - phi * phi) * var;
    Ok(Ar1Fit { mean, phi, noise_sd: noise_var.max(S::zero()).sqrt() })
}

/// Core mean-reversion/jump parameters recovered from a deseasonalized
/// log-price series.
#[derive(Debug, Clone, Copy)]
pub struct JumpDiffusionFit<S: Scalar> {
    /// Mean-reversion rate, per year.
    pub reversion_rate: S,
    /// Long-run level.
    pub long_run_level: S,
    /// Diffusion volatility, per square-root year.
    pub volatility: S,
    /// Per-step jump probability.
    pub jump_probability: S,
    /// Standard deviation of the identified jump returns.
    pub jump_sd: S,
    /// Number of returns flagged as jumps.
    pub n_jumps: usize,
}

/// Fits the discretized mean-reverting jump diffusion.
///
/// Jumps are the returns whose absolute value exceeds three times the return
/// standard deviation. The per-step jump probability is half the flagged
/// fraction — a price spike produces two large returns in a row (up then
/// back down), so raw counting would double the event rate. Flagged returns
/// are excluded from the least-squares step that recovers the reversion
/// rate, level and volatility. A series with no flagged returns is a valid
/// degenerate fit with zero jump intensity, not an error.
pub fn fit_jump_diffusion<S: Scalar>(
    log_prices: &[S],
    dt_years: S,
) -> Result<JumpDiffusionFit<S>, FitError> {
    let n = log_prices.len();
    if n < 100 {
        return Err(FitError::DegenerateSeries(format!("{n} observations, need at least 100")));
    }
    let m = n - 1;
    let mf = S::of(m as f64);
    let mut returns = Vec::with_capacity(m);
    for i in 0..m {
        returns.push(log_prices[i + 1] - log_prices[i]);
    }
    let r_mean = returns.iter().fold(S::zero(), |a, &x| a + x) / mf;
    let r_var =
        returns.iter().fold(S::zero(), |a, &x| a + (x - r_mean) * (x - r_mean)) / mf;
    if r_var <= S::machine_eps() {
        return Err(FitError::DegenerateSeries("constant log-price series".into()));
    }
    let threshold = S::of(3.0) * r_var.sqrt();

    let jump_mask: Vec<bool> = returns.iter().map(|r| r.abs() > threshold).collect();
    let n_jumps = jump_mask.iter().filter(|&&b| b).count();
    let jump_probability = S::of(n_jumps as f64) / mf / S::of(2.0);
    let jump_sd = if n_jumps > 0 {
        let jumps: Vec<S> = returns
            .iter()
            .zip(&jump_mask)
            .filter(|(_, &m)| m)
            .map(|(&r, _)| r)
            .collect();
        let jm = jumps.iter().fold(S::zero(), |a, &x| a + x) / S::of(n_jumps as f64);
        (jumps.iter().fold(S::zero(), |a, &x| a + (x - jm) * (x - jm))
            / S::of(n_jumps as f64))
        .sqrt()
    } else {
        S::zero()
    };

    // OLS of the non-jump returns on [1, y_prev]: slope -lambda*dt,
    // intercept lambda*mu*dt.
    let keep: Vec<usize> = (0..m).filter(|&i| !jump_mask[i]).collect();
    if keep.len() < 10 {
        return Err(FitError::DegenerateSeries("too few non-jump returns".into()));
    }
    let x = DMatrix::from_fn(keep.len(), 2, |r, c| {
        if c == 0 {
            S::one()
        } else {
            log_prices[keep[r]]
        }
    });
    let y = DVector::from_fn(keep.len(), |r, _| returns[keep[r]]);
    let svd = x.clone().svd(true, true);
    let coeffs = svd
        .solve(&y, S::machine_eps() * S::of(keep.len() as f64))
        .map_err(|e| FitError::RankDeficient(e.to_string()))?;
    let intercept = coeffs[0];
    let slope = coeffs[1];
    if !(slope < S::zero()) {
        return Err(FitError::DegenerateSeries(format!(
            "no mean reversion detected (slope {})",
            slope.to_f64x()
        )));
    }
    let reversion_rate = -slope / dt_years;
    let long_run_level = -intercept / slope;
    let resid = &y - &x * &coeffs;
    let resid_var =
        resid.iter().fold(S::zero(), |a, &x| a + x * x) / S::of(keep.len() as f64);
    let volatility = (resid_var / dt_years).sqrt();

    Ok(JumpDiffusionFit {
        reversion_rate,
        long_run_level,
        volatility,
        jump_probability,
        jump_sd,
        n_jumps,
    })
}

/// Seasonal decomposition of a series.
#[derive(Debug, Clone)]
pub struct SeasonalFit<S: Scalar> {
    /// Hour-of-week means (carries the grand mean), length 168.
    pub hour_of_week: Vec<S>,
    /// Month-of-year offsets (zero-mean), length 12.
    pub month_of_year: Vec<S>,
    /// `series - hour - month`, index-aligned with the input.
    pub residuals: Vec<S>,
}

/// Bucket-mean seasonal fit. Every hour-of-week and month-of-year bucket
/// must receive at least one observation.
pub fn fit_seasonals<S: Scalar>(
    series: &[S],
    seasons: &[SeasonIndex],
) -> Result<SeasonalFit<S>, FitError> {
    if series.len() != seasons.len() {
        return Err(FitError::LengthMismatch(series.len(), seasons.len()));
    }
    let mut hour_sum = vec![S::zero(); 168];
    let mut hour_count = vec![0usize; 168];
    for (&v, s) in series.iter().zip(seasons) {
        hour_sum[s.hour_of_week] += v;
        hour_count[s.hour_of_week] += 1;
    }
    let mut hour_of_week = vec![S::zero(); 168];
    for i in 0..168 {
        if hour_count[i] == 0 {
            return Err(FitError::EmptyBucket { kind: "hour-of-week", index: i });
        }
        hour_of_week[i] = hour_sum[i] / S::of(hour_count[i] as f64);
    }

    let mut month_sum = vec![S::zero(); 12];
    let mut month_count = vec![0usize; 12];
    for (&v, s) in series.iter().zip(seasons) {
        month_sum[s.month] += v - hour_of_week[s.hour_of_week];
        month_count[s.month] += 1;
    }
    let mut month_of_year = vec![S::zero(); 12];
    for i in 0..12 {
        if month_count[i] == 0 {
            return Err(FitError::EmptyBucket { kind: "month-of-year", index: i });
        }
        month_of_year[i] = month_sum[i] / S::of(month_count[i] as f64);
    }
    // Identifiability: shift the month table to zero mean, the hour table
    // absorbs the shift.
    let shift = month_of_year.iter().fold(S::zero(), |a, &x| a + x) / S::of(12.0);
    for v in &mut month_of_year {
        *v -= shift;
    }
    for v in &mut hour_of_week {
        *v += shift;
    }

    let residuals = series
        .iter()
        .zip(seasons)
        .map(|(&v, s)| v - hour_of_week[s.hour_of_week] - month_of_year[s.month])
        .collect();
    Ok(SeasonalFit { hour_of_week, month_of_year, residuals })
}

/// Degree-5 least-squares polynomial fit of `load` against `temperature`.
pub fn fit_demand_polynomial<S: Scalar>(
    load: &[S],
    temperature: &[S],
) -> Result<[S; 6], FitError> {
    if load.len() != temperature.len() {
        return Err(FitError::LengthMismatch(load.len(), temperature.len()));
    }
    let mut distinct: Vec<f64> = temperature.iter().map(|t| t.to_f64x()).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < 6 {
        return Err(FitError::RankDeficient(format!(
            "{} distinct temperature values, need at least 6",
            distinct.len()
        )));
    }
    let n = load.len();
    let x = DMatrix::from_fn(n, 6, |r, c| {
        let mut p = S::one();
        for _ in 0..c {
            p *= temperature[r];
        }
        p
    });
    let y = DVector::from_column_slice(load);
    let svd = x.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = S::of(n as f64) * S::machine_eps() * sigma_max;
    if svd.rank(tol) < 6 {
        return Err(FitError::RankDeficient("temperature design matrix".into()));
    }
    let coeffs = svd.solve(&y, tol).map_err(|e| FitError::RankDeficient(e.to_string()))?;
    let mut out = [S::zero(); 6];
    for i in 0..6 {
        out[i] = coeffs[i];
    }
    Ok(out)
}

/// Wind model from a wind-speed series (m/s): AR(1) on the de-meaned square
/// root of the speeds.
pub fn fit_wind_model<S: Scalar>(speeds: &[S]) -> Result<WindModel<S>, FitError> {
    let sqrt_speeds: Vec<S> = speeds.iter().map(|&w| w.max(S::zero()).sqrt()).collect();
    let ar = fit_ar1(&sqrt_speeds)?;
    Ok(WindModel {
        mean_sqrt_speed: ar.mean,
        ar_coefficient: ar.phi,
        noise_sd: ar.noise_sd,
        ..WindModel::default()
    })
}

/// Price model from a spot-price series: shift from the data minimum,
/// seasonal decomposition of the log prices, then the jump-diffusion fit on
/// the deseasonalized residual.
pub fn fit_price_model<S: Scalar>(
    prices: &[S],
    seasons: &[SeasonIndex],
    step_seconds: S,
) -> Result<PriceModel<S>, FitError> {
    if prices.is_empty() {
        return Err(FitError::DegenerateSeries("empty price series".into()));
    }
    let min = prices.iter().fold(prices[0], |a, &x| a.min(x));
    let shift = S::one() - min;
    let logs: Vec<S> = prices.iter().map(|&p| (p + shift).ln()).collect();
    let seasonal = fit_seasonals(&logs, seasons)?;
    // The jump-diffusion level absorbs the grand mean, so recenter the hour
    // table around zero and fit on mean-plus-residual.
    let grand = seasonal.hour_of_week.iter().fold(S::zero(), |a, &x| a + x) / S::of(168.0);
    let hour_of_week: Vec<S> = seasonal.hour_of_week.iter().map(|&v| v - grand).collect();
    let deseasonalized: Vec<S> = seasonal.residuals.iter().map(|&r| r + grand).collect();
    let jd = fit_jump_diffusion(&deseasonalized, PriceModel::<S>::dt_years(step_seconds))?;
    Ok(PriceModel {
        reversion_rate: jd.reversion_rate,
        long_run_level: jd.long_run_level,
        volatility: jd.volatility,
        jump_probability: jd.jump_probability,
        jump_sd: jd.jump_sd,
        shift,
        hour_of_week,
        month_of_year: seasonal.month_of_year,
    })
}

/// Demand model from a load series, with an optional paired temperature
/// series for the polynomial pathway.
pub fn fit_demand_model<S: Scalar>(
    load: &[S],
    seasons: &[SeasonIndex],
    temperature: Option<&[S]>,
) -> Result<DemandModel<S>, FitError> {
    let seasonal = fit_seasonals(load, seasons)?;
    let ar = fit_ar1(&seasonal.residuals)?;
    let temperature_poly = match temperature {
        Some(t) => Some(fit_demand_polynomial(&seasonal.residuals, t)?),
        None => None,
    };
    Ok(DemandModel {
        hour_of_week: seasonal.hour_of_week,
        month_of_year: seasonal.month_of_year,
        ar_coefficient: ar.phi,
        noise_var: ar.noise_sd * ar.noise_sd,
        temperature_poly,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::models::YEAR_SECONDS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synth_seasons(n: usize) -> Vec<SeasonIndex> {
        (0..n).map(|i| SeasonIndex::new(i % 168, (i / 168) % 12)).collect()
    }

    #[test]
    fn ar1_white_noise_has_no_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let series: Vec<f64> = (0..n).map(|_| f64::sample_std_normal(&mut rng)).collect();
        let fit = fit_ar1(&series).unwrap();
        assert!(fit.phi.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn ar1_round_trip_recovers_phi() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (phi, sd, mean) = (0.7633, 0.4020, 1.4781);
        let n = 100_000;
        let mut y = 0.0;
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            y = phi * y + sd * f64::sample_std_normal(&mut rng);
            series.push(mean + y);
        }
        let fit = fit_ar1(&series).unwrap();
        assert!((fit.phi - phi).abs() < 0.01, "phi {}", fit.phi);
        assert!((fit.noise_sd - sd).abs() < 0.01, "sd {}", fit.noise_sd);
        assert!((fit.mean - mean).abs() < 0.05);
    }

    #[test]
    fn ar1_rejects_constant_series() {
        let series = vec![2.5f64; 100];
        assert!(matches!(fit_ar1(&series), Err(FitError::DegenerateSeries(_))));
    }

    #[test]
    fn jump_diffusion_pure_ou_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dt = 900.0 / YEAR_SECONDS;
        let (lambda, mu, sigma) = (1800.9f64, 4.1995, 11.0971);
        let n = 100_000;
        let mut y = mu;
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            y += lambda * (mu - y) * dt
                + sigma * dt.sqrt() * f64::sample_std_normal(&mut rng);
            series.push(y);
        }
        let fit = fit_jump_diffusion(&series, dt).unwrap();
        assert!((fit.reversion_rate - lambda).abs() < 0.05 * lambda, "lambda {}", fit.reversion_rate);
        assert!((fit.long_run_level - mu).abs() < 0.05 * mu, "mu {}", fit.long_run_level);
        assert!((fit.volatility - sigma).abs() < 0.05 * sigma, "sigma {}", fit.volatility);
        // Gaussian false positives only: P(|z| > 3)/2 ~ 0.00135.
        assert!(fit.jump_probability <= 0.002, "p {}", fit.jump_probability);
    }

    #[test]
    fn jump_diffusion_recovers_injected_spikes() {
        // Spikes revert on the next step, producing the paired large returns
        // the halved count assumes; magnitudes at the jump scale keep every
        // spike above the detection threshold.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dt = 900.0 / YEAR_SECONDS;
        let (lambda, mu, sigma) = (1800.9f64, 4.1995, 11.0971);
        let (p_jump, jump_sd) = (0.0170, 0.4229);
        let n = 100_000;
        let mut y = mu;
        let mut spike = 0.0;
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            y += lambda * (mu - y) * dt
                + sigma * dt.sqrt() * f64::sample_std_normal(&mut rng);
            let mut level = y;
            if spike != 0.0 {
                spike = 0.0;
            } else if rng.gen_range(0.0..1.0) < p_jump {
                spike = if rng.gen_range(0.0..1.0) < 0.5 { jump_sd } else { -jump_sd };
            }
            level += spike;
            series.push(level);
        }
        let fit = fit_jump_diffusion(&series, dt).unwrap();
        assert!((fit.jump_probability - p_jump).abs() < 0.005, "p {}", fit.jump_probability);
        assert!(
            (fit.jump_sd - jump_sd).abs() < 0.10 * jump_sd,
            "jump sd {} vs {}",
            fit.jump_sd,
            jump_sd
        );
    }

    #[test]
    fn jump_diffusion_rejects_constant_series() {
        let series = vec![1.0f64; 500];
        assert!(matches!(
            fit_jump_diffusion(&series, 1.0 / 35040.0),
            Err(FitError::DegenerateSeries(_))
        ));
    }

    #[test]
    fn seasonals_constant_series() {
        let n = 168 * 12 * 2;
        let series = vec![5.0f64; n];
        let fit = fit_seasonals(&series, &synth_seasons(n)).unwrap();
        assert!(fit.hour_of_week.iter().all(|&v| (v - 5.0).abs() < 1e-12));
        assert!(fit.month_of_year.iter().all(|&v| v.abs() < 1e-12));
        assert!(fit.residuals.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn seasonals_weekly_sinusoid() {
        let n = 168 * 12 * 3;
        let seasons = synth_seasons(n);
        let series: Vec<f64> = seasons
            .iter()
            .map(|s| (2.0 * std::f64::consts::PI * s.hour_of_week as f64 / 168.0).sin())
            .collect();
        let fit = fit_seasonals(&series, &seasons).unwrap();
        for (h, &v) in fit.hour_of_week.iter().enumerate() {
            let expected = (2.0 * std::f64::consts::PI * h as f64 / 168.0).sin();
            assert!((v - expected).abs() < 1e-12);
        }
        assert!(fit.residuals.iter().all(|&v| v.abs() < 1e-10));
    }

    #[test]
    fn seasonals_composite_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hour: Vec<f64> = (0..168).map(|_| 10.0 + rng.gen_range(-2.0..2.0)).collect();
        let month_raw: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let month_mean = month_raw.iter().sum::<f64>() / 12.0;
        let month: Vec<f64> = month_raw.iter().map(|v| v - month_mean).collect();
        let n = 168 * 12 * 4;
        let seasons = synth_seasons(n);
        let series: Vec<f64> =
            seasons.iter().map(|s| hour[s.hour_of_week] + month[s.month]).collect();
        let fit = fit_seasonals(&series, &seasons).unwrap();
        for i in 0..168 {
            assert!((fit.hour_of_week[i] - hour[i]).abs() < 1e-9);
        }
        for i in 0..12 {
            assert!((fit.month_of_year[i] - month[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn seasonals_reports_empty_bucket() {
        let n = 200; // covers only the first 200 hour buckets/one month
        let seasons: Vec<SeasonIndex> =
            (0..n).map(|i| SeasonIndex::new(i % 168, 0)).collect();
        let series = vec![1.0f64; n];
        match fit_seasonals(&series, &seasons) {
            Err(FitError::EmptyBucket { kind: "month-of-year", index }) => assert_eq!(index, 1),
            other => panic!("expected empty month bucket, got {other:?}"),
        }
    }

    #[test]
    fn polynomial_exact_recovery() {
        let alpha = [1.0f64, -0.5, 0.25, 0.1, -0.02, 0.005];
        let temps: Vec<f64> = (0..200).map(|i| -2.0 + 4.0 * i as f64 / 199.0).collect();
        let load: Vec<f64> = temps
            .iter()
            .map(|&t| alpha.iter().rev().fold(0.0, |acc, &a| acc * t + a))
            .collect();
        let fit = fit_demand_polynomial(&load, &temps).unwrap();
        for i in 0..6 {
            assert!((fit[i] - alpha[i]).abs() < 1e-8, "alpha_{i}: {} vs {}", fit[i], alpha[i]);
        }
    }

    #[test]
    fn polynomial_noisy_within_sampling_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let alpha = [2.0f64, 1.0, -0.3, 0.05, -0.01, 0.002];
        let sigma = 0.5;
        let n = 100_000;
        let temps: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let load: Vec<f64> = temps
            .iter()
            .map(|&t| {
                alpha.iter().rev().fold(0.0, |acc, &a| acc * t + a)
                    + sigma * f64::sample_std_normal(&mut rng)
            })
            .collect();
        let fit = fit_demand_polynomial(&load, &temps).unwrap();
        // Sampling-distribution oracle: se^2 = sigma^2 * diag((X'X)^-1).
        let x = DMatrix::from_fn(n, 6, |r, c| temps[r].powi(c as i32));
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        for i in 0..6 {
            let se = (sigma * sigma * xtx_inv[(i, i)]).sqrt();
            assert!(
                (fit[i] - alpha[i]).abs() < 3.0 * se,
                "alpha_{i}: {} vs {} (se {se})",
                fit[i],
                alpha[i]
            );
        }
    }

    #[test]
    fn polynomial_rejects_constant_temperature() {
        let temps = vec![20.0f64; 50];
        let load = vec![1.0f64; 50];
        assert!(matches!(
            fit_demand_polynomial(&load, &temps),
            Err(FitError::RankDeficient(_))
        ));
    }

    #[test]
    fn wind_model_round_trip() {
        let model = WindModel::<f64>::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut y = 0.0;
        let n = 100_000;
        let mut speeds = Vec::with_capacity(n);
        for _ in 0..n {
            let (yn, speed, _) = model.step(y, 900.0, &mut rng);
            y = yn;
            speeds.push(speed);
        }
        let fit = fit_wind_model(&speeds).unwrap();
        assert!((fit.ar_coefficient - model.ar_coefficient).abs() < 0.01);
        assert!((fit.mean_sqrt_speed - model.mean_sqrt_speed).abs() < 0.02);
        assert!((fit.noise_sd - model.noise_sd).abs() < 0.01);
    }
}
