//! Energy-storage dispatch environment.
//!
//! Physics of the five-flow storage system (wind `W`, grid `G`, storage `R`,
//! demand `D`): feasibility, the storage transition, the dollar contribution,
//! and the turbine power curve. The stochastic wind / price / demand models
//! and their fitting procedures live in [`models`] and [`fit`]; CSV ingestion
//! and the synthetic data generator live in [`data`].
//!
//! Sign conventions: all flows are MWh over one step and nonnegative, except
//! `x_gr`, which may be negative when selling from storage to the grid is
//! allowed.

pub mod data;
pub mod fit;
pub mod models;

pub use models::{DemandModel, PriceModel, SeasonIndex, StochasticModels, WindModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Physical parameters of the storage device and the market step.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct StorageSpec<S: Scalar> {
    /// Total capacity in MWh.
    pub capacity_mwh: S,
    /// Most negative storage-fraction change per step (discharge rate), <= 0.
    pub charge_frac_min: S,
    /// Largest storage-fraction change per step (charge rate), >= 0.
    pub charge_frac_max: S,
    pub eta_charge: S,
    pub eta_discharge: S,
    /// Fraction of capacity that must stay full.
    pub floor_frac: S,
    pub allow_sell_to_grid: bool,
    /// Step length in seconds.
    pub step_seconds: S,
}

#[derive(Debug, Error)]
pub enum StorageSpecError {
    #[error("invalid storage spec: {0}")]
    Invalid(String),
}

impl<S: Scalar> StorageSpec<S> {
    pub fn validate(&self) -> Result<(), StorageSpecError> {
        let bad = |msg: String| Err(StorageSpecError::Invalid(msg));
        if !(self.capacity_mwh > S::zero()) {
            return bad(format!("capacity {} must be positive", self.capacity_mwh.to_f64x()));
        }
        if self.charge_frac_min > S::zero() || self.charge_frac_max < S::zero() {
            return bad("charge fraction bounds must bracket zero".into());
        }
        if !(self.floor_frac >= S::zero() && self.floor_frac < S::one()) {
            return bad(format!("floor fraction {} outside [0, 1)", self.floor_frac.to_f64x()));
        }
        for (name, eta) in [("charge", self.eta_charge), ("discharge", self.eta_discharge)] {
            if !(eta > S::zero() && eta < S::one()) {
                return bad(format!("eta_{name} {} outside (0, 1)", eta.to_f64x()));
            }
        }
        if !(self.step_seconds > S::zero()) {
            return bad("step length must be positive".into());
        }
        Ok(())
    }

    /// Round-trip efficiency of a charge/discharge cycle.
    pub fn round_trip_efficiency(&self) -> S {
        self.eta_charge * self.eta_discharge
    }

    fn flow_tol(&self) -> S {
        S::feasibility_tol() * self.capacity_mwh.max(S::one())
    }
}

/// System state at one step: storage fraction, wind energy, demand and spot
/// price, plus the time-of-day slot for time-dependent problems.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct StorageState<S: Scalar> {
    /// Fraction of capacity that is full, in `[floor_frac, 1]`.
    pub resource_frac: S,
    /// Wind energy generated over the step, MWh.
    pub wind_mwh: S,
    /// Demand over the step, MWh.
    pub demand_mwh: S,
    /// Spot price, $/MWh. May be negative.
    pub price: S,
    /// Fifteen-minute slot of the day, `0..96`, when time is part of the state.
    pub time_slot: Option<u16>,
}

impl<S: Scalar> StorageState<S> {
    pub fn steady(resource_frac: S, wind_mwh: S, demand_mwh: S, price: S) -> Self {
        Self { resource_frac, wind_mwh, demand_mwh, price, time_slot: None }
    }
}

/// A full five-flow decision. `x_wd`, `x_wr` and `x_gd` are derived from the
/// two free components `(x_gr, x_rd)` and the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowDecision<S: Scalar> {
    /// Grid to storage (negative = storage sold to grid).
    pub x_gr: S,
    /// Storage to demand.
    pub x_rd: S,
    /// Wind to demand.
    pub x_wd: S,
    /// Wind to storage.
    pub x_wr: S,
    /// Grid to demand.
    pub x_gd: S,
}

/// Names the first constraint a rejected decision violates.
#[derive(Debug, Clone, Error)]
pub enum FlowError {
    #[error("storage-to-demand flow {x_rd} is negative")]
    NegativeDischarge { x_rd: f64 },
    #[error("grid-to-demand flow {x_gd} is negative (demand oversupplied)")]
    NegativeGridToDemand { x_gd: f64 },
    #[error("grid flow {x_gr} outside permitted rate interval [{lo}, {hi}]")]
    GridRate { x_gr: f64, lo: f64, hi: f64 },
    #[error("discharge flow {x_rd} above permitted rate {hi}")]
    DischargeRate { x_rd: f64, hi: f64 },
    #[error("resulting storage fraction {next} below floor {floor}")]
    FloorViolated { next: f64, floor: f64 },
}

/// Completes `(x_gr, x_rd)` into a full flow vector and validates every
/// constraint: wind serves demand first, the surplus goes to storage, the
/// grid covers the remainder, rates stay inside the permitted interval and
/// the post-transition storage level stays above the floor.
pub fn derive_flows<S: Scalar>(
    state: &StorageState<S>,
    spec: &StorageSpec<S>,
    x_gr: S,
    x_rd: S,
) -> Result<FlowDecision<S>, FlowError> {
    let tol = spec.flow_tol();
    if x_rd < -tol {
        return Err(FlowError::NegativeDischarge { x_rd: x_rd.to_f64x() });
    }
    let x_rd = x_rd.max(S::zero());
    let x_wd = state.wind_mwh.min(state.demand_mwh);
    let x_wr = state.wind_mwh - x_wd;
    let x_gd = state.demand_mwh - spec.eta_discharge * x_rd - x_wd;
    if x_gd < -tol {
        return Err(FlowError::NegativeGridToDemand { x_gd: x_gd.to_f64x() });
    }
    let x_gd = x_gd.max(S::zero());

    let gr_hi = spec.charge_frac_max * spec.capacity_mwh / spec.eta_charge;
    let gr_lo = if spec.allow_sell_to_grid {
        spec.charge_frac_min * spec.capacity_mwh / spec.eta_discharge
    } else {
        S::zero()
    };
    if x_gr < gr_lo - tol || x_gr > gr_hi + tol {
        return Err(FlowError::GridRate {
            x_gr: x_gr.to_f64x(),
            lo: gr_lo.to_f64x(),
            hi: gr_hi.to_f64x(),
        });
    }
    let rd_hi = spec.charge_frac_max * spec.capacity_mwh;
    if x_rd > rd_hi + tol {
        return Err(FlowError::DischargeRate { x_rd: x_rd.to_f64x(), hi: rd_hi.to_f64x() });
    }

    let flows = FlowDecision { x_gr, x_rd, x_wd, x_wr, x_gd };
    let next = storage_transition(state, &flows, spec);
    if next < spec.floor_frac - S::feasibility_tol() {
        return Err(FlowError::FloorViolated {
            next: next.to_f64x(),
            floor: spec.floor_frac.to_f64x(),
        });
    }
    Ok(flows)
}

/// Axis-aligned bounds on the two free decision components. Sound but not
/// complete: every point of the box is feasible, and the box may collapse to
/// a single point (it is never empty).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBox<S: Scalar> {
    pub gr_lo: S,
    pub gr_hi: S,
    pub rd_lo: S,
    pub rd_hi: S,
}

impl<S: Scalar> ActionBox<S> {
    /// Uniform lattice over the box, row-major over (gr, rd).
    pub fn lattice(&self, gr_points: usize, rd_points: usize) -> Vec<(S, S)> {
        let interp = |lo: S, hi: S, i: usize, n: usize| {
            if n <= 1 || lo == hi {
                (lo + hi) / S::of(2.0)
            } else {
                lo + (hi - lo) * S::of(i as f64) / S::of((n - 1) as f64)
            }
        };
        let mut out = Vec::with_capacity(gr_points * rd_points);
        for i in 0..gr_points.max(1) {
            for j in 0..rd_points.max(1) {
                out.push((
                    interp(self.gr_lo, self.gr_hi, i, gr_points),
                    interp(self.rd_lo, self.rd_hi, j, rd_points),
                ));
            }
        }
        out
    }
}

/// Feasible bounds on `(x_gr, x_rd)` at a state: the permitted-rate interval
/// intersected with the bounds that keep the next storage fraction inside
/// `[floor, 1]`. Charging past the cap is not excluded — the transition clips
/// it — but the floor is enforced jointly: the box's worst corner (maximum
/// discharge, maximum sale) still respects it.
pub fn feasible_action_box<S: Scalar>(
    state: &StorageState<S>,
    spec: &StorageSpec<S>,
) -> ActionBox<S> {
    let cap = spec.capacity_mwh;
    let x_wd = state.wind_mwh.min(state.demand_mwh);
    let x_wr = state.wind_mwh - x_wd;
    let headroom_down = (state.resource_frac - spec.floor_frac).max(S::zero()) * cap;
    let headroom_up = (S::one() - state.resource_frac).max(S::zero()) * cap;

    let rd_rate = spec.charge_frac_max * cap;
    let rd_demand = (state.demand_mwh - x_wd).max(S::zero()) / spec.eta_discharge;
    let rd_hi = rd_rate
        .min(rd_demand)
        .min(headroom_down + spec.eta_charge * x_wr)
        .max(S::zero());

    let gr_lo_rate = if spec.allow_sell_to_grid {
        spec.charge_frac_min * cap / spec.eta_discharge
    } else {
        S::zero()
    };
    // Floor with the discharge component already at its maximum.
    let gr_lo = gr_lo_rate.max((rd_hi - headroom_down) / spec.eta_charge - x_wr);
    let gr_hi_rate = spec.charge_frac_max * cap / spec.eta_charge;
    let gr_hi = gr_hi_rate.min(headroom_up / spec.eta_charge - x_wr).max(gr_lo);

    ActionBox { gr_lo, gr_hi, rd_lo: S::zero(), rd_hi }
}

/// Next storage fraction after applying a flow decision; charge beyond the
/// capacity is dissipated (clipped at 1).
pub fn storage_transition<S: Scalar>(
    state: &StorageState<S>,
    flows: &FlowDecision<S>,
    spec: &StorageSpec<S>,
) -> S {
    let delta =
        (spec.eta_charge * (flows.x_gr + flows.x_wr) - flows.x_rd) / spec.capacity_mwh;
    (state.resource_frac + delta).min(S::one())
}

/// Dollar value of one step: energy sold to demand minus energy bought from
/// the grid, all at the spot price.
pub fn contribution<S: Scalar>(state: &StorageState<S>, flows: &FlowDecision<S>) -> S {
    state.price * state.demand_mwh - state.price * (flows.x_gr + flows.x_gd)
}

/// Turbine energy over one step (MWh) from wind speed (m/s): swept-area power
/// curve with air density `rho` and power coefficient `cp`.
pub fn wind_power<S: Scalar>(speed: S, step_seconds: S, cp: S, rho: S) -> S {
    let rotor_area = S::of(2500.0 * std::f64::consts::PI);
    S::of(1e-8 / 36.0)
        * S::of(0.5)
        * cp
        * rho
        * rotor_area
        * speed
        * speed
        * speed
        * step_seconds
}
