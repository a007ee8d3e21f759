//! Stochastic wind, price and demand models.
//!
//! * Wind: AR(1) on the de-meaned square root of the wind speed; speed is the
//!   square of the recomposed value and feeds the turbine power curve.
//! * Price: mean-reverting jump diffusion on deseasonalized log prices, with
//!   hour-of-week and month-of-year seasonal tables and a shift constant so
//!   the exponential can produce negative prices.
//! * Demand: hour-of-week and month-of-year seasonal tables plus an AR(1)
//!   residual, floored at zero.
//!
//! Default parameter sets come from reference calibrations on 15-minute
//! wind-speed data and hourly market data; they produce plausible price and
//! wind paths out of the box. Seasonal tables default to a procedural
//! diurnal shape (night trough, morning ramp, evening peak, damped
//! weekends).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wind_power;
use crate::scalar::Scalar;

/// Seconds per (365-day) year; converts per-year model rates to per-step.
pub const YEAR_SECONDS: f64 = 31_536_000.0;

/// Calendar position used to look up seasonal components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonIndex {
    /// Hour of the week, `0..168`, Monday midnight = 0.
    pub hour_of_week: usize,
    /// Month of the year, `0..12`.
    pub month: usize,
}

impl SeasonIndex {
    pub const ZERO: Self = Self { hour_of_week: 0, month: 0 };

    pub fn new(hour_of_week: usize, month: usize) -> Self {
        debug_assert!(hour_of_week < 168 && month < 12);
        Self { hour_of_week, month }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    Invalid(String),
    #[error("parameter mismatch: mean-reversion step lambda*dt = {0} >= 2 oscillates explosively")]
    ParameterMismatch(f64),
}

/// AR(1) wind-speed model plus turbine constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct WindModel<S: Scalar> {
    /// Mean of the square root of the wind speed.
    pub mean_sqrt_speed: S,
    /// AR(1) coefficient of the de-meaned square-root speed, per step.
    pub ar_coefficient: S,
    /// Innovation standard deviation.
    pub noise_sd: S,
    /// Air density, kg/m^3.
    pub air_density: S,
    /// Turbine power coefficient.
    pub power_coefficient: S,
}

impl<S: Scalar> Default for WindModel<S> {
    fn default() -> Self {
        Self {
            mean_sqrt_speed: S::of(1.4781),
            ar_coefficient: S::of(0.7633),
            noise_sd: S::of(0.4020),
            air_density: S::of(1.225),
            power_coefficient: S::of(0.45),
        }
    }
}

impl<S: Scalar> WindModel<S> {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.ar_coefficient.abs() >= S::one() {
            return Err(ModelError::Invalid(format!(
                "wind AR coefficient {} not inside (-1, 1)",
                self.ar_coefficient.to_f64x()
            )));
        }
        if !(self.noise_sd > S::zero()) {
            return Err(ModelError::Invalid("wind noise sd must be positive".into()));
        }
        Ok(())
    }

    /// Stationary standard deviation of the de-meaned square-root process.
    pub fn stationary_sd(&self) -> S {
        self.noise_sd / (S::one() - self.ar_coefficient * self.ar_coefficient).sqrt()
    }

    /// Speed (m/s) implied by a square-root-scale value.
    pub fn speed_from_sqrt(&self, y: S) -> S {
        let s = y + self.mean_sqrt_speed;
        s * s
    }

    /// Energy over one step (MWh) at a square-root-scale value.
    pub fn energy_from_sqrt(&self, y: S, step_seconds: S) -> S {
        wind_power(self.speed_from_sqrt(y), step_seconds, self.power_coefficient, self.air_density)
    }

    /// Square-root-scale value implied by a step energy. Uses the principal
    /// (nonnegative-speed-root) branch.
    pub fn sqrt_from_energy(&self, energy: S, step_seconds: S) -> S {
        let unit = wind_power(S::one(), step_seconds, self.power_coefficient, self.air_density);
        let speed = (energy / unit).max(S::zero()).powf(S::one() / S::of(3.0));
        speed.sqrt() - self.mean_sqrt_speed
    }

    /// One AR(1) step: returns the new square-root-scale value, the wind
    /// speed and the step energy.
    pub fn step<R: Rng + ?Sized>(&self, y: S, step_seconds: S, rng: &mut R) -> (S, S, S) {
        let y_next = self.ar_coefficient * y + self.noise_sd * S::sample_std_normal(rng);
        let speed = self.speed_from_sqrt(y_next);
        let energy =
            wind_power(speed, step_seconds, self.power_coefficient, self.air_density);
        (y_next, speed, energy)
    }
}

/// Mean-reverting jump-diffusion model for spot prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct PriceModel<S: Scalar> {
    /// Mean-reversion rate, per year.
    pub reversion_rate: S,
    /// Long-run deseasonalized log-price level.
    pub long_run_level: S,
    /// Diffusion volatility, per square-root year.
    pub volatility: S,
    /// Probability of a jump in one step.
    pub jump_probability: S,
    /// Standard deviation of a jump.
    pub jump_sd: S,
    /// Shift constant: price = exp(log level) - shift.
    pub shift: S,
    /// Hour-of-week seasonal log offsets (zero-mean), length 168.
    pub hour_of_week: Vec<S>,
    /// Month-of-year seasonal log offsets (zero-mean), length 12.
    pub month_of_year: Vec<S>,
}

impl<S: Scalar> Default for PriceModel<S> {
    fn default() -> Self {
        Self {
            reversion_rate: S::of(1800.9),
            long_run_level: S::of(4.1995),
            volatility: S::of(11.0971),
            jump_probability: S::of(0.0170),
            jump_sd: S::of(0.4229),
            shift: S::of(27.2531),
            hour_of_week: default_hour_of_week_price(),
            month_of_year: default_month_of_year(0.05),
        }
    }
}

impl<S: Scalar> PriceModel<S> {
    /// Default parameters with seasonality removed (steady-state problems).
    pub fn stationary() -> Self {
        Self { hour_of_week: vec![S::zero(); 168], month_of_year: vec![S::zero(); 12], ..Self::default() }
    }

    pub fn validate(&self, step_seconds: S) -> Result<(), ModelError> {
        if !(self.reversion_rate > S::zero()
            && self.volatility > S::zero()
            && self.jump_sd >= S::zero())
        {
            return Err(ModelError::Invalid(
                "price reversion rate and volatility must be positive".into(),
            ));
        }
        if self.jump_probability < S::zero() || self.jump_probability > S::one() {
            return Err(ModelError::Invalid("jump probability outside [0, 1]".into()));
        }
        if self.hour_of_week.len() != 168 || self.month_of_year.len() != 12 {
            return Err(ModelError::Invalid("seasonal tables must have 168 and 12 entries".into()));
        }
        let lambda_dt = (self.reversion_rate * Self::dt_years(step_seconds)).to_f64x();
        if lambda_dt >= 2.0 {
            return Err(ModelError::ParameterMismatch(lambda_dt));
        }
        Ok(())
    }

    pub fn dt_years(step_seconds: S) -> S {
        step_seconds / S::of(YEAR_SECONDS)
    }

    pub fn seasonal(&self, season: &SeasonIndex) -> S {
        self.hour_of_week[season.hour_of_week] + self.month_of_year[season.month]
    }

    /// Price implied by a deseasonalized log level at a calendar position.
    pub fn price_at(&self, y_ds: S, season: &SeasonIndex) -> S {
        (y_ds + self.seasonal(season)).exp() - self.shift
    }

    /// Deseasonalized log level implied by a price.
    pub fn log_level_from_price(&self, price: S, season: &SeasonIndex) -> S {
        (price + self.shift).ln() - self.seasonal(season)
    }

    /// One Euler step of the jump diffusion. `next_season` indexes the
    /// seasonal component of the *new* time; returns the new deseasonalized
    /// log level and price.
    pub fn step<R: Rng + ?Sized>(
        &self,
        y_ds: S,
        step_seconds: S,
        next_season: &SeasonIndex,
        rng: &mut R,
    ) -> (S, S) {
        let dt = Self::dt_years(step_seconds);
        let diffusion = self.volatility * dt.sqrt() * S::sample_std_normal(rng);
        // The jump indicator consumes one uniform per step regardless of the
        // outcome so sample paths stay aligned across parameter choices.
        let u = S::sample_uniform(rng, S::zero(), S::one());
        let jump = if u < self.jump_probability {
            self.jump_sd * S::sample_std_normal(rng)
        } else {
            S::zero()
        };
        let y_next = y_ds + self.reversion_rate * (self.long_run_level - y_ds) * dt + diffusion + jump;
        (y_next, self.price_at(y_next, next_season))
    }
}

/// Seasonal-plus-AR(1) demand model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DemandModel<S: Scalar> {
    /// Hour-of-week seasonal level (MWh per step), length 168; carries the
    /// grand mean of the decomposition.
    pub hour_of_week: Vec<S>,
    /// Month-of-year seasonal offsets (MWh per step, zero-mean), length 12.
    pub month_of_year: Vec<S>,
    /// AR(1) coefficient of the deseasonalized residual, per step.
    pub ar_coefficient: S,
    /// Innovation variance of the residual.
    pub noise_var: S,
    /// Optional degree-5 temperature polynomial for the residual, fitted
    /// from temperature data when available.
    pub temperature_poly: Option<[S; 6]>,
}

impl<S: Scalar> Default for DemandModel<S> {
    fn default() -> Self {
        // Hourly-market-scale defaults: mean load 35 GWh/h with a +-25%
        // diurnal swing, damped on weekends.
        let base = 35_000.0;
        let shape = default_hour_of_week_shape();
        let hour_of_week = shape.iter().map(|s| S::of(base * (1.0 + 0.25 * s))).collect();
        Self {
            hour_of_week,
            month_of_year: default_month_of_year(0.10 * base),
            ar_coefficient: S::of(0.9636),
            noise_var: S::of(914_870.0),
            temperature_poly: None,
        }
    }
}

impl<S: Scalar> DemandModel<S> {
    /// A flat demand model: constant level, no residual variance is not
    /// representable (variance must be positive), so callers wanting a fixed
    /// demand hold it outside the model.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.ar_coefficient.abs() >= S::one() {
            return Err(ModelError::Invalid(format!(
                "demand AR coefficient {} not inside (-1, 1)",
                self.ar_coefficient.to_f64x()
            )));
        }
        if !(self.noise_var > S::zero()) {
            return Err(ModelError::Invalid("demand noise variance must be positive".into()));
        }
        if self.hour_of_week.len() != 168 || self.month_of_year.len() != 12 {
            return Err(ModelError::Invalid("seasonal tables must have 168 and 12 entries".into()));
        }
        Ok(())
    }

    pub fn seasonal(&self, season: &SeasonIndex) -> S {
        self.hour_of_week[season.hour_of_week] + self.month_of_year[season.month]
    }

    /// One residual AR(1) step plus seasonal recomposition; demand is floored
    /// at zero while the residual keeps evolving unfloored.
    pub fn step<R: Rng + ?Sized>(
        &self,
        residual: S,
        next_season: &SeasonIndex,
        rng: &mut R,
    ) -> (S, S) {
        let sd = self.noise_var.sqrt();
        let next = self.ar_coefficient * residual + sd * S::sample_std_normal(rng);
        let demand = (self.seasonal(next_season) + next).max(S::zero());
        (next, demand)
    }
}

/// The three exogenous processes of one environment instance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct StochasticModels<S: Scalar> {
    pub wind: WindModel<S>,
    pub price: PriceModel<S>,
    pub demand: DemandModel<S>,
}

impl<S: Scalar> StochasticModels<S> {
    pub fn validate(&self, step_seconds: S) -> Result<(), ModelError> {
        self.wind.validate()?;
        self.price.validate(step_seconds)?;
        self.demand.validate()
    }
}

/// Normalized diurnal shape in [-1, 1]: trough before dawn, morning ramp,
/// evening peak. One value per hour of the week, weekends damped.
fn default_hour_of_week_shape() -> [f64; 168] {
    const DAY: [f64; 24] = [
        -0.75, -0.85, -0.95, -1.00, -0.95, -0.70, -0.30, 0.10, 0.35, 0.45, 0.50, 0.52, 0.53,
        0.52, 0.50, 0.50, 0.55, 0.70, 0.90, 1.00, 0.85, 0.45, -0.05, -0.45,
    ];
    let mut out = [0.0; 168];
    for day in 0..7 {
        let damp = if day >= 5 { 0.6 } else { 1.0 };
        for h in 0..24 {
            out[day * 24 + h] = DAY[h] * damp;
        }
    }
    out
}

fn default_hour_of_week_price<S: Scalar>() -> Vec<S> {
    // Log-price offsets: roughly a factor of 1.5 between trough and peak.
    let shape = default_hour_of_week_shape();
    let raw: Vec<f64> = shape.iter().map(|s| 0.20 * s).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|v| S::of(v - mean)).collect()
}

fn default_month_of_year<S: Scalar>(amplitude: f64) -> Vec<S> {
    // Mild summer and winter peaks, zero-mean by construction of the cosine.
    (0..12)
        .map(|m| S::of(amplitude * (2.0 * std::f64::consts::PI * (m as f64 - 0.5) / 6.0).cos()))
        .collect()
}
