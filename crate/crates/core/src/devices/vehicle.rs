use serde::{Deserialize, Serialize};

use super::{SignalView, SteeringSignal, ENERGY_TOL};
use crate::error::{Error, Result};
use crate::timeseries::Profile;

const MAX_BISECTION_ITERS: usize = 200;

/// A plug-in period: the vehicle must receive `required_kwh` in
/// `[arrival, departure)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingSession {
    pub arrival: usize,
    pub departure: usize,
    pub required_kwh: f64,
}

/// Charge-only vehicle (EV or PHEV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferTimeShiftable {
    pub name: String,
    pub capacity_kwh: f64,
    pub max_power_w: f64,
    pub sessions: Vec<ChargingSession>,
}

pub fn plan_buffer_timeshiftable(dev: &BufferTimeShiftable, sig: &SteeringSignal) -> Result<Profile> {
    let mut out = vec![0.0; sig.desired.len()];
    plan_sessions_into(dev, &dev.sessions, sig.view(), &mut out)?;
    Ok(Profile::from_parts_unchecked(*sig.desired.grid(), out))
}

fn check_session(dev: &BufferTimeShiftable, i: usize, s: &ChargingSession, n: usize, dt_h: f64) -> Result<()> {
    let infeasible = |why: String| Err(Error::Infeasible(format!("{} session {i}: {why}", dev.name)));
    if s.arrival >= s.departure || s.departure > n {
        return infeasible(format!(
            "window [{}, {}) invalid for a {n}-interval horizon",
            s.arrival, s.departure
        ));
    }
    if !(s.required_kwh >= 0.0) || s.required_kwh > dev.capacity_kwh * (1.0 + ENERGY_TOL) {
        return infeasible(format!(
            "required {} kWh outside [0, {}]",
            s.required_kwh, dev.capacity_kwh
        ));
    }
    let max_kwh = dev.max_power_w * (s.departure - s.arrival) as f64 * dt_h / 1000.0;
    if s.required_kwh > max_kwh * (1.0 + ENERGY_TOL) {
        return infeasible(format!(
            "required {} kWh exceeds {max_kwh} kWh deliverable in the window",
            s.required_kwh
        ));
    }
    Ok(())
}

/// Plans every session into `out` (zeros elsewhere). Sessions are planned in
/// order, each against the desired profile minus earlier sessions.
pub(crate) fn plan_sessions_into(
    dev: &BufferTimeShiftable,
    sessions: &[ChargingSession],
    sig: SignalView<'_>,
    out: &mut [f64],
) -> Result<()> {
    let n = sig.len();
    out.fill(0.0);
    for (i, s) in sessions.iter().enumerate() {
        check_session(dev, i, s, n, sig.dt_h)?;
        let window = s.arrival..s.departure;
        let energy_wh = s.required_kwh.min(dev.max_power_w * window.len() as f64 * sig.dt_h / 1000.0) * 1000.0;
        let mut x = vec![0.0; window.len()];
        if energy_wh > 0.0 {
            if sig.alpha > 0.0 {
                let base: Vec<f64> = window
                    .clone()
                    .map(|t| sig.desired[t] - out[t] - sig.price_weight(t) / (2.0 * sig.alpha))
                    .collect();
                water_fill(&base, dev.max_power_w, energy_wh, sig.dt_h, &mut x)
                    .map_err(|e| e.context(format!("{} session {i}", dev.name)))?;
            } else {
                let prices: Vec<f64> = window.clone().map(|t| sig.prices[t]).collect();
                greedy_fill(&prices, dev.max_power_w, energy_wh, sig.dt_h, &mut x);
            }
        }
        for (k, t) in window.enumerate() {
            out[t] += x[k];
        }
    }
    Ok(())
}

/// `x_t = clamp(base_t + μ, 0, cap)` with `μ` chosen so that
/// `Σ x_t · Δt = energy_wh`.
fn water_fill(base: &[f64], cap: f64, energy_wh: f64, dt_h: f64, x: &mut [f64]) -> Result<()> {
    let target = energy_wh / dt_h;
    let fill = |mu: f64, x: &mut [f64]| -> f64 {
        let mut s = 0.0;
        for (xi, b) in x.iter_mut().zip(base) {
            *xi = (b + mu).clamp(0.0, cap);
            s += *xi;
        }
        s
    };
    if base.iter().any(|b| !b.is_finite()) {
        return Err(Error::Convergence("non-finite steering signal".into()));
    }
    let bmax = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bmin = base.iter().copied().fold(f64::INFINITY, f64::min);
    let full = cap * base.len() as f64;
    if target >= full {
        x.fill(cap);
        return Ok(());
    }
    let (mut lo, mut hi) = (-bmax, cap - bmin);
    let tol = target * 1e-12;
    let mut sum = 0.0;
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        sum = fill(mid, x);
        if (sum - target).abs() <= tol || mid == lo || mid == hi {
            break;
        }
        if sum < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Spread the residual over the unclamped intervals.
    let residual = target - sum;
    if residual != 0.0 {
        let free: Vec<usize> = (0..x.len())
            .filter(|&i| if residual > 0.0 { x[i] < cap } else { x[i] > 0.0 })
            .collect();
        if !free.is_empty() {
            let share = residual / free.len() as f64;
            for i in free {
                x[i] = (x[i] + share).clamp(0.0, cap);
            }
        }
        sum = x.iter().sum();
    }
    if (sum - target).abs() > ENERGY_TOL * target {
        return Err(Error::Convergence(format!(
            "water-filling missed energy target by {} W-intervals",
            sum - target
        )));
    }
    Ok(())
}

/// Cheapest intervals first at full power, one fractional interval; ties go
/// to the earlier interval.
fn greedy_fill(prices: &[f64], cap: f64, energy_wh: f64, dt_h: f64, x: &mut [f64]) {
    let mut order: Vec<usize> = (0..prices.len()).collect();
    order.sort_by(|&a, &b| prices[a].total_cmp(&prices[b]).then(a.cmp(&b)));
    let mut left = energy_wh;
    for t in order {
        if left <= 0.0 {
            break;
        }
        let e = (cap * dt_h).min(left);
        x[t] = e / dt_h;
        left -= e;
    }
}

/// Uncontrolled charging: full power from arrival until the energy is in.
pub(crate) fn baseline_charging(dev: &BufferTimeShiftable, n: usize, dt_h: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    for (i, s) in dev.sessions.iter().enumerate() {
        check_session(dev, i, s, n, dt_h)?;
        let mut left = s.required_kwh * 1000.0;
        for t in s.arrival..s.departure {
            if left <= 0.0 {
                break;
            }
            let e = (dev.max_power_w * dt_h).min(left);
            out[t] += e / dt_h;
            left -= e;
        }
    }
    Ok(out)
}
