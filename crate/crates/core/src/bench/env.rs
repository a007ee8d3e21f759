//! Simulation views of benchmark problems.
//!
//! [`DiscreteBenchEnv`] exposes a compiled discretized problem through the
//! [`Mdp`] trait, sharing the grids and exogenous transition rows with the
//! exact solver so simulated paths and the optimal benchmark live on the
//! identical chain. [`ContinuousBenchEnv`] steps the calibrated stochastic
//! models directly with a lattice over the feasible flow box as the action
//! set.
//!
//! Exogenous sampling consumes a fixed pattern of draws per step and greedy
//! policies consume none, so with a shared `(seed, path)` stream every
//! policy sees the same exogenous realization.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exact::discretize::DiscretizedEnvironment;
use crate::mdp::Mdp;
use crate::scalar::Scalar;
use crate::storage::models::SeasonIndex;
use crate::storage::{
    contribution as flow_contribution, derive_flows, feasible_action_box, storage_transition,
    StochasticModels, StorageSpec, StorageState,
};

/// Discretized benchmark problem as a simulatable MDP. Pre- and
/// post-decision states share the product index space (the post state is the
/// index with the resource level already moved and the exogenous levels
/// unchanged).
#[derive(Debug, Clone)]
pub struct DiscreteBenchEnv {
    pub env: DiscretizedEnvironment<f64>,
}

/// A resolved level move: the action of the discrete environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelAction {
    pub delta: i32,
    pub contribution: f64,
}

impl DiscreteBenchEnv {
    pub fn new(env: DiscretizedEnvironment<f64>) -> Self {
        Self { env }
    }

    pub fn n_states(&self) -> usize {
        self.env.n_states()
    }

    /// Index of the resource coordinate in the post-state coordinate vector.
    pub fn resource_coord_index(&self) -> usize {
        usize::from(self.env.spec.time_levels > 1)
    }

    /// Index of the price coordinate in the post-state coordinate vector.
    pub fn price_coord_index(&self) -> usize {
        self.post_dim_len() - 1
    }

    fn post_dim_len(&self) -> usize {
        self.env.coord_names().len()
    }

    /// Scaling bounds for each post-state coordinate, from the grids.
    pub fn basis_bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds = Vec::new();
        if self.env.spec.time_levels > 1 {
            bounds.push((0.0, (self.env.spec.time_levels - 1).max(1) as f64));
        }
        bounds.push((self.env.spec.storage.floor_frac, 1.0));
        if self.env.wind_grid.len() > 1 {
            bounds.push(span_of(&self.env.wind_grid));
        }
        bounds.push(span_of(&self.env.price_grid));
        bounds
    }

    /// One exogenous transition from `(tau, p, w)`: price then wind, exactly
    /// one uniform each. Used by both the MDP view and the pairing-hash
    /// replay.
    fn step_exogenous(
        &self,
        tau: usize,
        p: usize,
        w: usize,
        rng: &mut ChaCha8Rng,
    ) -> (usize, usize, usize) {
        let lp = self.env.price_grid.len();
        let p_next = self.env.price_rows[tau * lp + p].sample(rng) as usize;
        let w_next = self.env.wind_rows[w].sample(rng) as usize;
        ((tau + 1) % self.env.spec.time_levels, p_next, w_next)
    }

    /// FNV-1a hash of the exogenous realization of one path: start index
    /// plus `horizon` exogenous draws. Policy-independent by construction.
    pub fn exogenous_path_hash(&self, start: usize, horizon: usize, rng: &mut ChaCha8Rng) -> u64 {
        let (mut tau, _, mut p, mut w) = self.env.split_index(start);
        let mut hash = fnv1a_init();
        hash = fnv1a_u64(hash, start as u64);
        for _ in 0..horizon {
            let (t2, p2, w2) = self.step_exogenous(tau, p, w, rng);
            tau = t2;
            p = p2;
            w = w2;
            hash = fnv1a_u64(hash, ((p as u64) << 32) | w as u64);
        }
        hash
    }
}

impl Mdp<f64> for DiscreteBenchEnv {
    type PreState = usize;
    type PostState = usize;
    type Action = LevelAction;

    fn post_dim(&self) -> usize {
        self.post_dim_len()
    }

    fn post_coords_into(&self, post: &usize, buf: &mut [f64]) {
        let coords = self.env.coords_of(*post);
        buf.copy_from_slice(&coords);
    }

    fn sample_post_state(&self, rng: &mut ChaCha8Rng) -> usize {
        f64::sample_uniform(rng, 0.0, self.n_states() as f64) as usize % self.n_states()
    }

    fn sample_start_state(&self, rng: &mut ChaCha8Rng) -> usize {
        f64::sample_uniform(rng, 0.0, self.n_states() as f64) as usize % self.n_states()
    }

    fn exogenous_step(&self, post: &usize, rng: &mut ChaCha8Rng) -> usize {
        let (tau, r, p, w) = self.env.split_index(*post);
        let (tau2, p2, w2) = self.step_exogenous(tau, p, w, rng);
        self.env.state_index(tau2, r, p2, w2)
    }

    fn feasible_actions(&self, pre: &usize) -> Vec<LevelAction> {
        let (_, r, p, w) = self.env.split_index(*pre);
        self.env
            .feasible_deltas(r, self.env.wind_grid[w], self.env.price_grid[p])
            .into_iter()
            .map(|a| LevelAction { delta: a.delta_levels, contribution: a.contribution })
            .collect()
    }

    fn apply_action(&self, pre: &usize, action: &LevelAction) -> usize {
        let (tau, r, p, w) = self.env.split_index(*pre);
        let r_next = (r as i64 + action.delta as i64) as usize;
        self.env.state_index(tau, r_next, p, w)
    }

    fn contribution(&self, _pre: &usize, action: &LevelAction) -> f64 {
        action.contribution
    }
}

fn span_of(grid: &[f64]) -> (f64, f64) {
    let lo = grid.first().copied().unwrap_or(0.0);
    let hi = grid.last().copied().unwrap_or(1.0);
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

pub fn fnv1a_init() -> u64 {
    0xcbf2_9ce4_8422_2325
}

pub fn fnv1a_u64(mut hash: u64, value: u64) -> u64 {
    for byte in value.to_le_bytes() {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

pub fn fnv1a_bytes(mut hash: u64, bytes: &[u8]) -> u64 {
    for &byte in bytes {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

/// Full state of the continuous environment. The exogenous processes are
/// carried in their model coordinates (square-root wind scale,
/// deseasonalized log price, demand residual) so stepping never loses
/// information to observable-space clipping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ContState {
    pub resource_frac: f64,
    pub wind_y: f64,
    pub price_y: f64,
    pub demand_resid: f64,
    /// Slot of the day, `0..time_levels`.
    pub slot: u32,
}

/// Flow decision on the continuous action lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowAction {
    pub x_gr: f64,
    pub x_rd: f64,
}

/// Continuous-state benchmark environment: the calibrated models stepped
/// directly, with a configurable lattice over the feasible `(x_gr, x_rd)`
/// box as the action set.
#[derive(Debug, Clone)]
pub struct ContinuousBenchEnv {
    pub storage: StorageSpec<f64>,
    pub models: StochasticModels<f64>,
    /// 1 for steady state, otherwise slots per day.
    pub time_levels: usize,
    /// Log-price seasonal offset per slot.
    pub price_day_profile: Vec<f64>,
    /// Demand level per slot (MWh per step); the AR(1) residual rides on it.
    pub demand_day_profile: Vec<f64>,
    /// Wind enabled (battery-arbitrage problems have none).
    pub has_wind: bool,
    /// Demand enabled.
    pub has_demand: bool,
    /// Action lattice resolution per axis.
    pub action_grid: (usize, usize),
    /// Exploration/start bounds for the exogenous observables.
    pub wind_energy_hi: f64,
    pub price_bounds: (f64, f64),
    pub demand_bounds: (f64, f64),
}

impl ContinuousBenchEnv {
    fn season(&self, slot: u32) -> SeasonIndex {
        // The collapsed day profile carries the diurnal shape; the
        // hour-of-week tables of the models are not consulted directly.
        let _ = slot;
        SeasonIndex::ZERO
    }

    pub fn wind_energy(&self, state: &ContState) -> f64 {
        if self.has_wind {
            self.models
                .wind
                .energy_from_sqrt(state.wind_y, self.storage.step_seconds)
        } else {
            0.0
        }
    }

    pub fn price(&self, state: &ContState) -> f64 {
        let seasonal = self.price_day_profile[state.slot as usize];
        (state.price_y + seasonal).exp() - self.models.price.shift
    }

    pub fn demand(&self, state: &ContState) -> f64 {
        if self.has_demand {
            (self.demand_day_profile[state.slot as usize] + state.demand_resid).max(0.0)
        } else {
            0.0
        }
    }

    pub fn observe(&self, state: &ContState) -> StorageState<f64> {
        StorageState {
            resource_frac: state.resource_frac,
            wind_mwh: self.wind_energy(state),
            demand_mwh: self.demand(state),
            price: self.price(state),
            time_slot: (self.time_levels > 1).then_some(state.slot as u16),
        }
    }

    /// Post-state coordinate layout: `[slot?, resource, wind?, demand?, price]`.
    pub fn coord_layout(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        if self.time_levels > 1 {
            names.push("time_slot");
        }
        names.push("resource_frac");
        if self.has_wind {
            names.push("wind_mwh");
        }
        if self.has_demand {
            names.push("demand_mwh");
        }
        names.push("price");
        names
    }

    pub fn resource_coord_index(&self) -> usize {
        usize::from(self.time_levels > 1)
    }

    pub fn basis_bounds(&self) -> Vec<(f64, f64)> {
        let mut bounds = Vec::new();
        if self.time_levels > 1 {
            bounds.push((0.0, (self.time_levels - 1) as f64));
        }
        bounds.push((self.storage.floor_frac, 1.0));
        if self.has_wind {
            bounds.push((0.0, self.wind_energy_hi.max(1e-9)));
        }
        if self.has_demand {
            bounds.push(self.demand_bounds);
        }
        bounds.push(self.price_bounds);
        bounds
    }

    /// One exogenous step shared by the MDP view and the pairing replay:
    /// wind, then price, then demand, each consuming a fixed draw pattern.
    pub fn step_models(&self, state: &ContState, rng: &mut ChaCha8Rng) -> ContState {
        let step_seconds = self.storage.step_seconds;
        let next_slot = ((state.slot as usize + 1) % self.time_levels) as u32;
        let wind_y = if self.has_wind {
            let (y, _, _) = self.models.wind.step(state.wind_y, step_seconds, rng);
            y
        } else {
            state.wind_y
        };
        let (price_y, _) =
            self.models
                .price
                .step(state.price_y, step_seconds, &self.season(next_slot), rng);
        let demand_resid = if self.has_demand {
            let (resid, _) = self.models.demand.step(state.demand_resid, &self.season(next_slot), rng);
            resid
        } else {
            state.demand_resid
        };
        ContState {
            resource_frac: state.resource_frac,
            wind_y,
            price_y,
            demand_resid,
            slot: next_slot,
        }
    }

    fn sample_state(&self, rng: &mut ChaCha8Rng) -> ContState {
        let slot = if self.time_levels > 1 {
            f64::sample_uniform(rng, 0.0, self.time_levels as f64) as u32
                % self.time_levels as u32
        } else {
            0
        };
        let resource = f64::sample_uniform(rng, self.storage.floor_frac, 1.0);
        let wind_y = if self.has_wind {
            let energy = f64::sample_uniform(rng, 0.0, self.wind_energy_hi);
            self.models.wind.sqrt_from_energy(energy, self.storage.step_seconds)
        } else {
            0.0
        };
        let price = f64::sample_uniform(rng, self.price_bounds.0, self.price_bounds.1);
        let price_y =
            (price + self.models.price.shift).ln() - self.price_day_profile[slot as usize];
        let demand_resid = if self.has_demand {
            let demand = f64::sample_uniform(rng, self.demand_bounds.0, self.demand_bounds.1);
            demand - self.demand_day_profile[slot as usize]
        } else {
            0.0
        };
        ContState { resource_frac: resource, wind_y, price_y, demand_resid, slot }
    }

    /// FNV-1a hash over the exogenous observables of one replayed path.
    pub fn exogenous_path_hash(
        &self,
        start: &ContState,
        horizon: usize,
        rng: &mut ChaCha8Rng,
    ) -> u64 {
        let mut state = *start;
        let mut hash = fnv1a_init();
        for value in [state.wind_y, state.price_y, state.demand_resid] {
            hash = fnv1a_u64(hash, value.to_bits());
        }
        for _ in 0..horizon {
            state = self.step_models(&state, rng);
            hash = fnv1a_u64(hash, state.price_y.to_bits());
            hash = fnv1a_u64(hash, state.wind_y.to_bits());
            hash = fnv1a_u64(hash, state.demand_resid.to_bits());
        }
        hash
    }
}

impl Mdp<f64> for ContinuousBenchEnv {
    type PreState = ContState;
    type PostState = ContState;
    type Action = FlowAction;

    fn post_dim(&self) -> usize {
        self.coord_layout().len()
    }

    fn post_coords_into(&self, post: &ContState, buf: &mut [f64]) {
        let mut idx = 0;
        if self.time_levels > 1 {
            buf[idx] = post.slot as f64;
            idx += 1;
        }
        buf[idx] = post.resource_frac;
        idx += 1;
        if self.has_wind {
            buf[idx] = self.wind_energy(post);
            idx += 1;
        }
        if self.has_demand {
            buf[idx] = self.demand(post);
            idx += 1;
        }
        buf[idx] = self.price(post);
    }

    fn sample_post_state(&self, rng: &mut ChaCha8Rng) -> ContState {
        self.sample_state(rng)
    }

    fn sample_start_state(&self, rng: &mut ChaCha8Rng) -> ContState {
        self.sample_state(rng)
    }

    fn exogenous_step(&self, post: &ContState, rng: &mut ChaCha8Rng) -> ContState {
        self.step_models(post, rng)
    }

    fn feasible_actions(&self, pre: &ContState) -> Vec<FlowAction> {
        let observed = self.observe(pre);
        let action_box = feasible_action_box(&observed, &self.storage);
        action_box
            .lattice(self.action_grid.0, self.action_grid.1)
            .into_iter()
            .map(|(x_gr, x_rd)| FlowAction { x_gr, x_rd })
            .collect()
    }

    fn apply_action(&self, pre: &ContState, action: &FlowAction) -> ContState {
        let observed = self.observe(pre);
        let flows = derive_flows(&observed, &self.storage, action.x_gr, action.x_rd)
            .expect("lattice points are feasible");
        let resource = storage_transition(&observed, &flows, &self.storage);
        ContState { resource_frac: resource, ..*pre }
    }

    fn contribution(&self, pre: &ContState, action: &FlowAction) -> f64 {
        let observed = self.observe(pre);
        let flows = derive_flows(&observed, &self.storage, action.x_gr, action.x_rd)
            .expect("lattice points are feasible");
        flow_contribution(&observed, &flows)
    }
}
