//! Discretization of the continuous storage environment.
//!
//! State grids are built from long seeded simulations of the stochastic
//! models (equal-probability quantile midpoints for the exogenous
//! dimensions, a uniform grid over `[floor, 1]` for the storage fraction).
//! Exogenous transition rows are estimated by Monte-Carlo simulation from
//! each grid point, binned to the nearest grid level (boundary levels absorb
//! the tails) and row-normalized. Resource transitions are deterministic
//! given the action and compose with the exogenous rows.
//!
//! Actions are integer resource-level deltas. On coarse grids one physical
//! rate step can be smaller than a grid cell, so the per-step level rate is
//! `max(1, round(rate / cell))`; at the reference discretization (33 levels,
//! C/10, 15-minute steps) this is exactly one level per step and the bounds
//! coincide with the physical rate constraints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DiscreteAction, DiscreteMdp, ExactError, SparseRow};
use crate::scalar::Scalar;
use crate::storage::{StochasticModels, StorageSpec};

/// Inputs to [`discretize_environment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DiscretizationSpec<S: Scalar> {
    pub storage: StorageSpec<S>,
    pub models: StochasticModels<S>,
    /// Fixed demand per step, MWh (zero for pure arbitrage problems).
    pub demand_per_step: S,
    /// 1 for steady state, otherwise slots per day (the reference uses 96).
    pub time_levels: usize,
    pub resource_levels: usize,
    pub price_levels: usize,
    /// 1 disables the wind dimension.
    pub wind_levels: usize,
    /// Monte-Carlo draws per transition row.
    pub mc_samples: usize,
    pub discount: S,
    /// Seed for grid construction and row estimation.
    pub seed: u64,
}

/// Grids, exogenous rows and action geometry shared by the exact solver and
/// the simulation view of a discretized problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct DiscretizedEnvironment<S: Scalar> {
    pub spec: DiscretizationSpec<S>,
    /// Storage fractions, uniform over `[floor, 1]`.
    pub resource_grid: Vec<S>,
    /// Price levels, $/MWh, ascending.
    pub price_grid: Vec<S>,
    /// Wind energies per step, MWh, ascending. `[0]` when wind is disabled.
    pub wind_grid: Vec<S>,
    /// Price transition rows indexed by `tau * price_levels + p`.
    pub price_rows: Vec<SparseRow<S>>,
    /// Wind transition rows indexed by wind level.
    pub wind_rows: Vec<SparseRow<S>>,
    /// Log-price seasonal offset per time slot (all zero when steady-state).
    pub day_profile: Vec<S>,
    /// Maximum resource-level move per step.
    pub level_rate: i32,
    /// Rows that received no Monte-Carlo mass and were set to self-loops.
    pub empty_bins: Vec<usize>,
}

/// A resolved level-delta action: the flow decomposition and its value.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedAction<S: Scalar> {
    pub delta_levels: i32,
    pub x_gr: S,
    pub x_rd: S,
    pub contribution: S,
}

impl<S: Scalar> DiscretizedEnvironment<S> {
    pub fn n_states(&self) -> usize {
        self.spec.time_levels
            * self.resource_grid.len()
            * self.price_grid.len()
            * self.wind_grid.len()
    }

    /// Width of one resource cell as a fraction of capacity.
    pub fn resource_cell(&self) -> S {
        if self.resource_grid.len() < 2 {
            S::zero()
        } else {
            self.resource_grid[1] - self.resource_grid[0]
        }
    }

    pub fn state_index(&self, tau: usize, r: usize, p: usize, w: usize) -> usize {
        ((tau * self.resource_grid.len() + r) * self.price_grid.len() + p)
            * self.wind_grid.len()
            + w
    }

    pub fn split_index(&self, state: usize) -> (usize, usize, usize, usize) {
        let lw = self.wind_grid.len();
        let lp = self.price_grid.len();
        let lr = self.resource_grid.len();
        let w = state % lw;
        let rest = state / lw;
        let p = rest % lp;
        let rest = rest / lp;
        let r = rest % lr;
        let tau = rest / lr;
        (tau, r, p, w)
    }

    pub fn coords_of(&self, state: usize) -> Vec<S> {
        let (tau, r, p, w) = self.split_index(state);
        let mut out = Vec::new();
        if self.spec.time_levels > 1 {
            out.push(S::of(tau as f64));
        }
        out.push(self.resource_grid[r]);
        if self.wind_grid.len() > 1 {
            out.push(self.wind_grid[w]);
        }
        out.push(self.price_grid[p]);
        out
    }

    pub fn coord_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if self.spec.time_levels > 1 {
            names.push("time_slot".into());
        }
        names.push("resource_frac".into());
        if self.wind_grid.len() > 1 {
            names.push("wind_mwh".into());
        }
        names.push("price".into());
        names
    }

    /// Effective per-step rate bounds in MWh: level-rate cells of capacity.
    fn rate_mwh(&self) -> S {
        if self.resource_grid.len() < 2 {
            return S::zero();
        }
        S::of(self.level_rate as f64) * self.resource_cell() * self.spec.storage.capacity_mwh
    }

    /// Resolves a level-delta action at exogenous values `(wind, price)`
    /// from resource level `r`. Returns `None` when no feasible flow
    /// decomposition reaches the target level. Among feasible
    /// decompositions the contribution-maximizing endpoint is chosen.
    pub fn resolve_action(
        &self,
        r: usize,
        delta_levels: i32,
        wind_mwh: S,
        price: S,
    ) -> Option<ResolvedAction<S>> {
        let target = r as i64 + delta_levels as i64;
        if target < 0 || target >= self.resource_grid.len() as i64 {
            return None;
        }
        let spec = &self.spec.storage;
        let demand = self.spec.demand_per_step;
        // Wind never exceeds the fixed demand on discretized problems
        // (enforced at build time), so the wind-to-storage flow is zero.
        let x_wd = wind_mwh.min(demand);
        let cap = spec.capacity_mwh;
        let cell_mwh = self.resource_cell() * cap;
        let delta_mwh = S::of(delta_levels as f64) * cell_mwh;
        let rate = self.rate_mwh();

        let gr_hi = rate / spec.eta_charge;
        let gr_lo = if spec.allow_sell_to_grid { -rate / spec.eta_discharge } else { S::zero() };
        let rd_cap = rate.min((demand - x_wd).max(S::zero()) / spec.eta_discharge);

        // x_gr = (delta + x_rd) / eta_charge must stay inside [gr_lo, gr_hi].
        let lo = (spec.eta_charge * gr_lo - delta_mwh).max(S::zero());
        let hi = (spec.eta_charge * gr_hi - delta_mwh).min(rd_cap);
        let tol = S::feasibility_tol() * cap.max(S::one());
        if lo > hi + tol {
            return None;
        }
        let hi = hi.max(lo);
        // Contribution is linear in x_rd for a fixed target level.
        let slope = price * (spec.eta_discharge - S::one() / spec.eta_charge);
        let x_rd = if slope > S::zero() { hi } else { lo };
        let x_gr = (delta_mwh + x_rd) / spec.eta_charge;
        let contribution = price * (spec.eta_discharge * x_rd - x_gr + x_wd);
        Some(ResolvedAction { delta_levels, x_gr, x_rd, contribution })
    }

    /// Feasible level deltas at `(r, wind, price)`, ascending.
    pub fn feasible_deltas(&self, r: usize, wind_mwh: S, price: S) -> Vec<ResolvedAction<S>> {
        let mut out = Vec::new();
        for d in -self.level_rate..=self.level_rate {
            if let Some(a) = self.resolve_action(r, d, wind_mwh, price) {
                out.push(a);
            }
        }
        out
    }

    /// Enumerates the product-state MDP with explicit transition rows.
    pub fn compile(&self) -> Result<DiscreteMdp<S>, ExactError> {
        let n = self.n_states();
        let lr = self.resource_grid.len();
        let lp = self.price_grid.len();
        let lw = self.wind_grid.len();
        let time = self.spec.time_levels;
        let actions: Vec<Vec<DiscreteAction<S>>> = (0..n)
            .into_par_iter()
            .map(|state| {
                let (tau, r, p, w) = self.split_index(state);
                let tau_next = (tau + 1) % time;
                let price_row = &self.price_rows[tau * lp + p];
                let wind_row = &self.wind_rows[w];
                self.feasible_deltas(r, self.wind_grid[w], self.price_grid[p])
                    .into_iter()
                    .map(|a| {
                        let r_next = (r as i64 + a.delta_levels as i64) as usize;
                        let mut entries =
                            Vec::with_capacity(price_row.entries.len() * wind_row.entries.len());
                        for &(pp, p_prob) in &price_row.entries {
                            for &(ww, w_prob) in &wind_row.entries {
                                let idx = ((tau_next * lr + r_next) * lp + pp as usize) * lw
                                    + ww as usize;
                                entries.push((idx as u32, p_prob * w_prob));
                            }
                        }
                        DiscreteAction {
                            label: a.delta_levels,
                            contribution: a.contribution,
                            row: SparseRow { entries },
                        }
                    })
                    .collect()
            })
            .collect();
        let coords = (0..n).map(|s| self.coords_of(s)).collect();
        DiscreteMdp::new(self.spec.discount, actions, coords, self.coord_names())
    }
}

/// Monte-Carlo transition-row estimation on a sorted grid. `step` maps a
/// grid value and an rng to a successor value, which is binned to the
/// nearest grid level. Rows with no mass (only possible for zero draws)
/// become flagged self-loops.
pub fn estimate_transition_rows<S, F>(
    grid: &[S],
    mc_samples: usize,
    seed: u64,
    stream_base: u64,
    step: F,
) -> (Vec<SparseRow<S>>, Vec<usize>)
where
    S: Scalar,
    F: Fn(S, &mut ChaCha8Rng) -> S + Sync,
{
    let rows: Vec<SparseRow<S>> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &origin)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_base + i as u64);
            let mut counts = vec![0usize; grid.len()];
            for _ in 0..mc_samples {
                let next = step(origin, &mut rng);
                counts[nearest_level(grid, next)] += 1;
            }
            let total: usize = counts.iter().sum();
            if total == 0 {
                return SparseRow { entries: vec![] };
            }
            let entries = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(j, &c)| (j as u32, S::of(c as f64) / S::of(total as f64)))
                .collect();
            SparseRow { entries }
        })
        .collect();
    let mut empty = Vec::new();
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if row.entries.is_empty() {
                empty.push(i);
                SparseRow::unit(i as u32)
            } else {
                row
            }
        })
        .collect();
    (rows, empty)
}

/// Index of the grid level nearest to `value` (ties to the upper level).
pub fn nearest_level<S: Scalar>(grid: &[S], value: S) -> usize {
    debug_assert!(!grid.is_empty());
    let mut idx = 0;
    while idx + 1 < grid.len() {
        let midpoint = (grid[idx] + grid[idx + 1]) / S::of(2.0);
        if value < midpoint {
            return idx;
        }
        idx += 1;
    }
    idx
}

/// Equal-probability levels from a sample: empirical quantiles at
/// `(i + 1/2) / n`.
fn quantile_midpoints<S: Scalar>(mut sample: Vec<S>, levels: usize) -> Vec<S> {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (0..levels)
        .map(|i| {
            let q = (i as f64 + 0.5) / levels as f64;
            let pos = (q * sample.len() as f64) as usize;
            sample[pos.min(sample.len() - 1)]
        })
        .collect()
}

const GRID_SIM_STEPS: usize = 200_000;
const GRID_SIM_BURNIN: usize = 2_000;
const WIND_STREAM: u64 = 1 << 32;
const PRICE_STREAM: u64 = 2 << 32;

/// Builds the discretized environment: grids from seeded stationary
/// simulations, then Monte-Carlo transition rows for each exogenous
/// dimension.
pub fn discretize_environment<S: Scalar>(
    spec: &DiscretizationSpec<S>,
) -> Result<DiscretizedEnvironment<S>, ExactError> {
    let err = |msg: String| Err(ExactError::Discretization(msg));
    if spec.resource_levels < 1 || spec.price_levels < 1 || spec.wind_levels < 1 {
        return err("level counts must be at least 1".into());
    }
    if spec.time_levels < 1 {
        return err("time levels must be at least 1".into());
    }
    if spec.mc_samples < 1 {
        return err("mc_samples must be at least 1".into());
    }
    spec.storage
        .validate()
        .map_err(|e| ExactError::Discretization(e.to_string()))?;
    spec.models
        .validate(spec.storage.step_seconds)
        .map_err(|e| ExactError::Discretization(e.to_string()))?;

    let step_seconds = spec.storage.step_seconds;
    let resource_grid: Vec<S> = if spec.resource_levels == 1 {
        vec![spec.storage.floor_frac]
    } else {
        let lo = spec.storage.floor_frac;
        let n = spec.resource_levels;
        (0..n)
            .map(|i| lo + (S::one() - lo) * S::of(i as f64) / S::of((n - 1) as f64))
            .collect()
    };

    let day_profile: Vec<S> = if spec.time_levels > 1 {
        (0..spec.time_levels)
            .map(|tau| {
                let hour = tau * 24 / spec.time_levels;
                let mut acc = S::zero();
                for day in 0..7 {
                    acc += spec.models.price.hour_of_week[day * 24 + hour];
                }
                acc / S::of(7.0)
            })
            .collect()
    } else {
        vec![S::zero()]
    };

    // Price grid from a stationary simulation that cycles the day profile.
    let price_grid = {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(3 << 32);
        let model = &spec.models.price;
        let mut y = model.long_run_level;
        let mut sample = Vec::with_capacity(GRID_SIM_STEPS);
        for i in 0..GRID_SIM_BURNIN + GRID_SIM_STEPS {
            y = step_log_price(model, y, step_seconds, &mut rng);
            if i >= GRID_SIM_BURNIN {
                let season = day_profile[i % spec.time_levels];
                sample.push((y + season).exp() - model.shift);
            }
        }
        quantile_midpoints(sample, spec.price_levels)
    };

    let wind_grid: Vec<S> = if spec.wind_levels == 1 {
        vec![S::zero()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(4 << 32);
        let model = &spec.models.wind;
        let mut y = S::zero();
        let mut sample = Vec::with_capacity(GRID_SIM_STEPS);
        for i in 0..GRID_SIM_BURNIN + GRID_SIM_STEPS {
            let (yn, _, e) = model.step(y, step_seconds, &mut rng);
            y = yn;
            if i >= GRID_SIM_BURNIN {
                sample.push(e);
            }
        }
        quantile_midpoints(sample, spec.wind_levels)
    };

    if wind_grid.last().copied().unwrap_or(S::zero()) > spec.demand_per_step
        && spec.wind_levels > 1
    {
        return err(format!(
            "wind grid maximum {} exceeds the fixed demand {}; discretized problems assume wind never outruns demand",
            wind_grid.last().unwrap().to_f64x(),
            spec.demand_per_step.to_f64x()
        ));
    }

    let mut empty_bins = Vec::new();
    let wind_rows = if spec.wind_levels == 1 {
        vec![SparseRow::unit(0)]
    } else {
        let model = spec.models.wind.clone();
        let (rows, empty) = estimate_transition_rows(
            &wind_grid,
            spec.mc_samples,
            spec.seed,
            WIND_STREAM,
            move |e, rng| {
                let y = model.sqrt_from_energy(e, step_seconds);
                let (_, _, e_next) = model.step(y, step_seconds, rng);
                e_next
            },
        );
        empty_bins.extend(empty);
        rows
    };

    // Price rows per (time slot, level).
    let price_rows = {
        let model = spec.models.price.clone();
        let mut rows = Vec::with_capacity(spec.time_levels * spec.price_levels);
        for tau in 0..spec.time_levels {
            let season_now = day_profile[tau];
            let season_next = day_profile[(tau + 1) % spec.time_levels];
            let model = model.clone();
            let (mut tau_rows, empty) = estimate_transition_rows(
                &price_grid,
                spec.mc_samples,
                spec.seed,
                PRICE_STREAM + (tau * spec.price_levels) as u64,
                move |p, rng| {
                    let y = (p + model.shift).ln() - season_now;
                    let y_next = step_log_price(&model, y, step_seconds, rng);
                    (y_next + season_next).exp() - model.shift
                },
            );
            empty_bins.extend(empty.into_iter().map(|i| tau * spec.price_levels + i));
            rows.append(&mut tau_rows);
        }
        rows
    };

    let cell = if spec.resource_levels > 1 {
        (S::one() - spec.storage.floor_frac) / S::of((spec.resource_levels - 1) as f64)
    } else {
        S::zero()
    };
    let level_rate = if spec.resource_levels > 1 {
        let ratio = (spec.storage.charge_frac_max / cell).to_f64x();
        (ratio.round() as i32).max(1)
    } else {
        0
    };

    Ok(DiscretizedEnvironment {
        spec: spec.clone(),
        resource_grid,
        price_grid,
        wind_grid,
        price_rows,
        wind_rows,
        day_profile,
        level_rate,
        empty_bins,
    })
}

/// One step of the deseasonalized log-price process.
fn step_log_price<S: Scalar>(
    model: &crate::storage::PriceModel<S>,
    y: S,
    step_seconds: S,
    rng: &mut ChaCha8Rng,
) -> S {
    let dt = crate::storage::PriceModel::<S>::dt_years(step_seconds);
    let diffusion = model.volatility * dt.sqrt() * S::sample_std_normal(rng);
    let u = S::sample_uniform(rng, S::zero(), S::one());
    let jump = if u < model.jump_probability {
        model.jump_sd * S::sample_std_normal(rng)
    } else {
        S::zero()
    };
    y + model.reversion_rate * (model.long_run_level - y) * dt + diffusion + jump
}
