//! Device models and their local planners.
//!
//! Every planner answers the same question: given a [`SteeringSignal`],
//! which feasible power profile minimises
//!
//! ```text
//! J(x) = α · Σ_t (x_t − d_t)²  +  (1 − α) · β · Σ_t π_t · x_t · Δt_h
//! ```
//!
//! where `d` is the desired profile, `π` the price and
//! `β = (‖d‖₂ + 1e-9) / (‖π‖₂ + 1e-9)` puts both terms on a comparable
//! scale. Storage devices (battery, heat-pump store) have a free terminal
//! state, so their cost term uses prices centred on the block mean: stored
//! energy left at the end of the block is valued at the mean price and no
//! plan gains from simply emptying the store.

mod pv;
mod shiftable;
mod storage;
mod vehicle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{ensure_same_grid, norm, EnergyPrice, Profile};

pub use pv::{pv_profile, PvPanel};
pub use shiftable::{plan_timeshiftable, Job, TimeShiftable};
pub use storage::{plan_buffer, plan_thermal, Buffer, ThermalBuffer};
pub use vehicle::{plan_buffer_timeshiftable, BufferTimeShiftable, ChargingSession};

pub(crate) use shiftable::plan_timeshiftable_into;
pub(crate) use storage::{
    battery_soc_after, plan_storage_into, thermal_soc_after,
    thermal_baseline, StorageModel,
};
pub(crate) use vehicle::{baseline_charging, plan_sessions_into};

pub const BETA_EPS: f64 = 1e-9;

/// Relative energy tolerance every planner meets on its equality constraints.
pub const ENERGY_TOL: f64 = 1e-6;

pub fn beta_for(desired: &[f64], prices: &[f64]) -> f64 {
    (norm(desired) + BETA_EPS) / (norm(prices) + BETA_EPS)
}

/// What the coordinator sends to an agent: a desired profile, the price
/// vector and the control/price weight `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSignal {
    pub desired: Profile,
    pub prices: EnergyPrice,
    pub alpha: f64,
    beta: f64,
}

impl SteeringSignal {
    pub fn new(desired: Profile, prices: EnergyPrice, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
        }
        ensure_same_grid(desired.grid(), prices.grid())?;
        let beta = beta_for(desired.values(), prices.values());
        Ok(Self {
            desired,
            prices,
            alpha,
            beta,
        })
    }

    /// Replaces the normalisation factor, e.g. to plan several devices of one
    /// household against a shared scale.
    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub(crate) fn view(&self) -> SignalView<'_> {
        SignalView {
            desired: self.desired.values(),
            prices: self.prices.values(),
            alpha: self.alpha,
            beta: self.beta,
            dt_h: self.desired.grid().dt_hours(),
        }
    }
}

/// Borrowed form of a signal used on the planning hot path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SignalView<'a> {
    pub desired: &'a [f64],
    pub prices: &'a [f64],
    pub alpha: f64,
    pub beta: f64,
    pub dt_h: f64,
}

impl SignalView<'_> {
    pub fn len(&self) -> usize {
        self.desired.len()
    }

    /// Weight of the linear price term per W at interval `t`.
    pub fn price_weight(&self, t: usize) -> f64 {
        (1.0 - self.alpha) * self.beta * self.prices[t] * self.dt_h
    }
}

/// The two terms of `J`, reported separately.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// `Σ (x − d)²`, unweighted.
    pub deviation: f64,
    /// `β · Σ π x Δt_h`, unweighted by `alpha`.
    pub cost: f64,
    pub total: f64,
}

fn objective_with(plan: &[f64], desired: &[f64], prices: &[f64], alpha: f64, beta: f64, dt_h: f64) -> Objective {
    let deviation: f64 = plan.iter().zip(desired).map(|(x, d)| (x - d) * (x - d)).sum();
    let cost: f64 = beta * plan.iter().zip(prices).map(|(x, p)| p * x * dt_h).sum::<f64>();
    Objective {
        deviation,
        cost,
        total: alpha * deviation + (1.0 - alpha) * cost,
    }
}

/// `J` for shiftable loads and charging sessions.
pub fn objective(plan: &Profile, sig: &SteeringSignal) -> Objective {
    let v = sig.view();
    objective_with(plan.values(), v.desired, v.prices, v.alpha, v.beta, v.dt_h)
}

/// `J` for storage devices: the price term uses prices centred on their mean.
pub fn storage_objective(plan: &Profile, sig: &SteeringSignal) -> Objective {
    let v = sig.view();
    let centred = centred_prices(v.prices);
    objective_with(plan.values(), v.desired, &centred, v.alpha, v.beta, v.dt_h)
}

pub(crate) fn centred_prices(prices: &[f64]) -> Vec<f64> {
    let m = crate::timeseries::mean(prices);
    prices.iter().map(|p| p - m).collect()
}

/// Report category of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    TimeShiftable,
    BufferTimeShiftable,
    Battery,
    Thermal,
    Pv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Device {
    TimeShiftable(TimeShiftable),
    BufferTimeShiftable(BufferTimeShiftable),
    Battery(Buffer),
    HeatPump(ThermalBuffer),
    Pv(PvPanel),
}

impl Device {
    pub fn name(&self) -> &str {
        match self {
            Device::TimeShiftable(d) => &d.name,
            Device::BufferTimeShiftable(d) => &d.name,
            Device::Battery(d) => &d.name,
            Device::HeatPump(d) => &d.name,
            Device::Pv(d) => &d.name,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Device::TimeShiftable(_) => Category::TimeShiftable,
            Device::BufferTimeShiftable(_) => Category::BufferTimeShiftable,
            Device::Battery(_) => Category::Battery,
            Device::HeatPump(_) => Category::Thermal,
            Device::Pv(_) => Category::Pv,
        }
    }

    pub fn is_controllable(&self) -> bool {
        !matches!(self, Device::Pv(_))
    }
}
