//! State-of-charge coupled planners (battery, heat-pump thermal store).
//!
//! The feasible set is a box on the power of each interval intersected with
//! a box on every prefix sum (the state of charge). Its edge directions are
//! moving power into or out of a single interval, which shifts the state on
//! a suffix, and moving power between two intervals, which shifts the state
//! on the span between them. The solver is cyclic coordinate descent over
//! both families with an exact, feasibility-projected line search per move,
//! repeated until a sweep improves the objective by less than a relative
//! 1e-6 or 500 sweeps have run.

use serde::{Deserialize, Serialize};

use super::{centred_prices, SignalView, SteeringSignal};
use crate::error::{Error, Result};
use crate::timeseries::Profile;

const MAX_SWEEPS: usize = 500;
const REL_IMPROVEMENT: f64 = 1e-6;
const MIN_MOVE_GAIN: f64 = 1e-10;
/// Slack on state-of-charge bounds when checking a warm start (kWh).
const SOC_SLACK: f64 = 1e-9;

/// Bidirectional battery with lossless conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub name: String,
    pub capacity_kwh: f64,
    pub max_power_w: f64,
    pub soc0_kwh: f64,
}

/// Heat pump feeding a thermal store that is drained by space-heating demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalBuffer {
    pub name: String,
    pub store_kwh_th: f64,
    pub cop: f64,
    pub max_power_w: f64,
    pub soc0_kwh_th: f64,
    /// Thermal energy drawn from the store in each interval.
    pub heat_demand_kwh_th: Vec<f64>,
}

/// Planning view of either storage device.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StorageModel<'a> {
    pub min_power_w: f64,
    pub max_power_w: f64,
    /// Stored kWh per W per hour.
    pub gain: f64,
    pub capacity_kwh: f64,
    pub soc0_kwh: f64,
    pub drain_kwh: Option<&'a [f64]>,
}

impl<'a> StorageModel<'a> {
    pub fn battery(dev: &Buffer, soc0_kwh: f64) -> Self {
        Self {
            min_power_w: -dev.max_power_w,
            max_power_w: dev.max_power_w,
            gain: 1e-3,
            capacity_kwh: dev.capacity_kwh,
            soc0_kwh,
            drain_kwh: None,
        }
    }

    pub fn thermal(dev: &ThermalBuffer, soc0_kwh: f64, drain: &'a [f64]) -> Self {
        Self {
            min_power_w: 0.0,
            max_power_w: dev.max_power_w,
            gain: dev.cop * 1e-3,
            capacity_kwh: dev.store_kwh_th,
            soc0_kwh,
            drain_kwh: Some(drain),
        }
    }

    fn drain(&self, t: usize) -> f64 {
        self.drain_kwh.map_or(0.0, |d| d[t])
    }

    fn soc_trajectory(&self, x: &[f64], dt_h: f64, soc: &mut [f64]) {
        let mut s = self.soc0_kwh;
        for t in 0..x.len() {
            s += self.gain * x[t] * dt_h - self.drain(t);
            soc[t] = s;
        }
    }

    pub(crate) fn is_feasible(&self, x: &[f64], dt_h: f64) -> bool {
        let mut soc = vec![0.0; x.len()];
        self.soc_trajectory(x, dt_h, &mut soc);
        x.iter()
            .all(|v| *v >= self.min_power_w && *v <= self.max_power_w)
            && soc
                .iter()
                .all(|s| *s >= -SOC_SLACK && *s <= self.capacity_kwh + SOC_SLACK)
    }
}

pub fn plan_buffer(dev: &Buffer, sig: &SteeringSignal) -> Result<Profile> {
    validate_buffer(dev)?;
    let mut out = vec![0.0; sig.desired.len()];
    plan_storage_into(StorageModel::battery(dev, dev.soc0_kwh), sig.view(), None, &mut out)?;
    Ok(Profile::from_parts_unchecked(*sig.desired.grid(), out))
}

pub fn plan_thermal(dev: &ThermalBuffer, sig: &SteeringSignal) -> Result<Profile> {
    validate_thermal(dev)?;
    if dev.heat_demand_kwh_th.len() != sig.desired.len() {
        return Err(Error::IncompatibleGrid(format!(
            "{}: heat demand has {} intervals, signal {}",
            dev.name,
            dev.heat_demand_kwh_th.len(),
            sig.desired.len()
        )));
    }
    let model = StorageModel::thermal(dev, dev.soc0_kwh_th, &dev.heat_demand_kwh_th);
    let mut out = vec![0.0; sig.desired.len()];
    plan_storage_into(model, sig.view(), None, &mut out)?;
    Ok(Profile::from_parts_unchecked(*sig.desired.grid(), out))
}

pub(crate) fn validate_buffer(dev: &Buffer) -> Result<()> {
    if !(dev.capacity_kwh > 0.0 && dev.max_power_w > 0.0) {
        return Err(Error::InvalidArgument(format!("{}: capacity and power must be positive", dev.name)));
    }
    if !(0.0..=dev.capacity_kwh).contains(&dev.soc0_kwh) {
        return Err(Error::InvalidArgument(format!(
            "{}: invalid soc0 {} kWh for capacity {} kWh",
            dev.name, dev.soc0_kwh, dev.capacity_kwh
        )));
    }
    Ok(())
}

pub(crate) fn validate_thermal(dev: &ThermalBuffer) -> Result<()> {
    if !(dev.store_kwh_th > 0.0 && dev.max_power_w > 0.0 && dev.cop > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{}: store, power and cop must be positive",
            dev.name
        )));
    }
    if !(0.0..=dev.store_kwh_th).contains(&dev.soc0_kwh_th) {
        return Err(Error::InvalidArgument(format!(
            "{}: invalid initial store {} kWh",
            dev.name, dev.soc0_kwh_th
        )));
    }
    if dev.heat_demand_kwh_th.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument(format!("{}: heat demand must be >= 0", dev.name)));
    }
    Ok(())
}

pub(crate) fn battery_soc_after(soc0: f64, plan: &[f64], dt_h: f64) -> f64 {
    plan.iter().fold(soc0, |s, x| s + x * dt_h * 1e-3)
}

pub(crate) fn thermal_soc_after(soc0: f64, cop: f64, plan: &[f64], drain: &[f64], dt_h: f64) -> f64 {
    plan.iter()
        .zip(drain)
        .fold(soc0, |s, (x, d)| s + cop * x * dt_h * 1e-3 - d)
}

/// Lowest-input feasible schedule: runs only as much as needed to keep the
/// store from under-running now or later.
pub(crate) fn feasible_thermal_start(model: &StorageModel<'_>, n: usize, dt_h: f64) -> Result<Vec<f64>> {
    let step_max = model.gain * model.max_power_w * dt_h;
    // required[t]: least state at the end of t that keeps the future servable
    let mut required = vec![0.0; n];
    for t in (0..n.saturating_sub(1)).rev() {
        required[t] = (required[t + 1] + model.drain(t + 1) - step_max).max(0.0);
    }
    let mut x = vec![0.0; n];
    let mut s = model.soc0_kwh;
    for t in 0..n {
        let need = required[t] - (s - model.drain(t));
        if need > 0.0 {
            if need > step_max * (1.0 + 1e-12) + SOC_SLACK || required[t] > model.capacity_kwh + SOC_SLACK {
                return Err(Error::Infeasible(format!(
                    "heat demand cannot be served from interval {t}"
                )));
            }
            x[t] = (need / (model.gain * dt_h)).min(model.max_power_w);
        }
        s += model.gain * x[t] * dt_h - model.drain(t);
    }
    Ok(x)
}

/// Uncontrolled heat pump: runs at full power (up to filling the store)
/// whenever the store would otherwise under-run.
pub(crate) fn thermal_baseline(dev: &ThermalBuffer, soc0: f64, drain: &[f64], dt_h: f64) -> Result<Vec<f64>> {
    let gain = dev.cop * 1e-3 * dt_h;
    let mut s = soc0;
    let mut x = vec![0.0; drain.len()];
    for (t, d) in drain.iter().enumerate() {
        if s - d < 0.0 {
            x[t] = dev.max_power_w.min((dev.store_kwh_th - s + d) / gain);
        }
        s += gain * x[t] - d;
        if s < -SOC_SLACK {
            return Err(Error::Infeasible(format!(
                "{}: heat demand cannot be served at interval {t}",
                dev.name
            )));
        }
    }
    Ok(x)
}

/// Exact step along a move direction: minimises `a·δ² + b·δ` over
/// `[lo, hi]`, where `a ≥ 0`. Returns the step and the objective gain.
fn line_search(a: f64, b: f64, lo: f64, hi: f64) -> (f64, f64) {
    let lo = lo.min(0.0);
    let hi = hi.max(0.0);
    let delta = if a > 0.0 {
        (-b / (2.0 * a)).clamp(lo, hi)
    } else if b > 0.0 {
        lo
    } else if b < 0.0 {
        hi
    } else {
        0.0
    };
    let gain = -(a * delta * delta + b * delta);
    (delta, gain)
}

/// Minimises the storage objective from a feasible start (the warm plan if
/// it is feasible, otherwise idle for a battery or the lowest-input schedule
/// for a thermal store) and writes the plan into `out`.
pub(crate) fn plan_storage_into(
    model: StorageModel<'_>,
    sig: SignalView<'_>,
    warm: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    let n = sig.len();
    let dt_h = sig.dt_h;
    let step = model.gain * dt_h;

    match warm {
        Some(w) if w.len() == n && model.is_feasible(w, dt_h) => out.copy_from_slice(w),
        _ => {
            if model.drain_kwh.is_some() {
                out.copy_from_slice(&feasible_thermal_start(&model, n, dt_h)?);
            } else {
                out.fill(0.0);
            }
        }
    }
    let x = out;

    let alpha = sig.alpha;
    let centred = centred_prices(sig.prices);
    let c: Vec<f64> = centred
        .iter()
        .map(|p| (1.0 - alpha) * sig.beta * p * dt_h)
        .collect();
    let d = sig.desired;

    let (pmin, pmax, cap) = (model.min_power_w, model.max_power_w, model.capacity_kwh);
    let mut soc = vec![0.0; n];
    if alpha > 0.0 {
        exact_quadratic(&model, d, &c, alpha, dt_h, x)?;
    } else {
        let objective = |x: &[f64]| -> f64 {
            (0..n)
                .map(|t| alpha * (x[t] - d[t]) * (x[t] - d[t]) + c[t] * x[t])
                .sum()
        };

        let mut suffix_min = vec![0.0; n];
        let mut suffix_max = vec![0.0; n];
            let mut j = objective(x);

        for sweep in 0..MAX_SWEEPS {
            let j_start = j;
            let mut moves = 0usize;

            // Single-interval moves: x_t += δ shifts soc on [t, n).
            model.soc_trajectory(x, dt_h, &mut soc);
            let (mut lo_acc, mut hi_acc) = (f64::INFINITY, f64::NEG_INFINITY);
            for t in (0..n).rev() {
                lo_acc = lo_acc.min(soc[t]);
                hi_acc = hi_acc.max(soc[t]);
                suffix_min[t] = lo_acc;
                suffix_max[t] = hi_acc;
            }
            let mut shift = 0.0;
            for t in 0..n {
                let smin = suffix_min[t] + shift;
                let smax = suffix_max[t] + shift;
                let lo = (pmin - x[t]).max(-smin / step);
                let hi = (pmax - x[t]).min((cap - smax) / step);
                let (delta, gain) = line_search(alpha, 2.0 * alpha * (x[t] - d[t]) + c[t], lo, hi);
                if gain > MIN_MOVE_GAIN && delta != 0.0 {
                    x[t] += delta;
                    shift += delta * step;
                    j -= gain;
                    moves += 1;
                }
            }

            // Pair moves: x_t += δ, x_u −= δ shifts soc on [t, u).
            model.soc_trajectory(x, dt_h, &mut soc);
            for t in 0..n {
                let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
                for u in t + 1..n {
                    rmin = rmin.min(soc[u - 1]);
                    rmax = rmax.max(soc[u - 1]);
                    let lo = (pmin - x[t]).max(x[u] - pmax).max(-rmin / step);
                    let hi = (pmax - x[t]).min(x[u] - pmin).min((cap - rmax) / step);
                    if lo >= 0.0 && hi <= 0.0 {
                        continue;
                    }
                    let b = 2.0 * alpha * ((x[t] - d[t]) - (x[u] - d[u])) + (c[t] - c[u]);
                    let (delta, gain) = line_search(2.0 * alpha, b, lo, hi);
                    if gain > MIN_MOVE_GAIN && delta != 0.0 {
                        x[t] += delta;
                        x[u] -= delta;
                        let ds = delta * step;
                        for s in &mut soc[t..u] {
                            *s += ds;
                        }
                        rmin += ds;
                        rmax += ds;
                        j -= gain;
                        moves += 1;
                    }
                }
            }

            // A linear objective is run to a fixed point so that re-planning
            // from the result returns it unchanged.
            let improvement = j_start - j;
            if moves == 0 || (alpha > 0.0 && improvement <= REL_IMPROVEMENT * j_start.abs().max(1e-9)) {
                break;
            }
            if sweep + 1 == MAX_SWEEPS {
                // Plan is feasible; the sweep cap only bounds effort.
                break;
            }
        }
    }

    // Snap rounding drift so the returned plan is feasible.
    for v in x.iter_mut() {
        *v = v.clamp(pmin, pmax);
    }
    model.soc_trajectory(x, dt_h, &mut soc);
    if let Some(t) = soc.iter().position(|s| *s < -1e-6 || *s > cap + 1e-6) {
        return Err(Error::Convergence(format!(
            "state of charge {} kWh out of bounds at interval {t}",
            soc[t]
        )));
    }
    Ok(())
}

/// Value at `l` of a nondecreasing piecewise-linear function given by
/// breakpoints, constant beyond the first and last.
fn pl_eval(lam: &[f64], val: &[f64], l: f64) -> f64 {
    let i = lam.partition_point(|x| *x <= l);
    if i == 0 {
        return val[0];
    }
    if i == lam.len() {
        return val[i - 1];
    }
    let (l0, l1) = (lam[i - 1], lam[i]);
    val[i - 1] + (val[i] - val[i - 1]) * (l - l0) / (l1 - l0)
}

/// Some `l` at which the function takes the value `v`.
fn pl_inverse(lam: &[f64], val: &[f64], v: f64) -> f64 {
    let i = val.partition_point(|x| *x < v);
    if i == 0 {
        return lam[0];
    }
    if i == val.len() {
        return lam[i - 1];
    }
    let (l0, l1) = (lam[i - 1], lam[i]);
    let (v0, v1) = (val[i - 1], val[i]);
    l0 + (l1 - l0) * (v - v0) / (v1 - v0)
}

/// Breakpoint lists of one function per interval, stored back to back.
#[derive(Default)]
struct PlStack {
    lam: Vec<f64>,
    val: Vec<f64>,
    off: Vec<usize>,
}

impl PlStack {
    fn with_capacity(fns: usize, points: usize) -> Self {
        let mut off = Vec::with_capacity(fns + 1);
        off.push(0);
        Self {
            lam: Vec::with_capacity(points),
            val: Vec::with_capacity(points),
            off,
        }
    }

    fn push(&mut self, l: f64, v: f64) {
        self.lam.push(l);
        self.val.push(v);
    }

    fn seal(&mut self) {
        self.off.push(self.lam.len());
    }

    fn get(&self, i: usize) -> (&[f64], &[f64]) {
        let r = self.off[i]..self.off[i + 1];
        (&self.lam[r.clone()], &self.val[r])
    }

    /// Appends `f` clamped to `[lo, hi]`, dropping interior points of flat
    /// runs.
    fn push_clamped(&mut self, lam: &[f64], val: &[f64], lo: f64, hi: f64) {
        let start = self.lam.len();
        let emit = |s: &mut Self, l: f64, v: f64| {
            let n = s.lam.len() - start;
            if n >= 2 && s.val[s.val.len() - 1] == v && s.val[s.val.len() - 2] == v {
                *s.lam.last_mut().unwrap() = l;
            } else {
                s.push(l, v);
            }
        };
        for i in 0..lam.len() {
            if i > 0 {
                let (l0, l1) = (lam[i - 1], lam[i]);
                let (v0, v1) = (val[i - 1], val[i]);
                for bound in [lo, hi] {
                    if v0 < bound && v1 > bound {
                        emit(self, l0 + (l1 - l0) * (bound - v0) / (v1 - v0), bound);
                    }
                }
            }
            emit(self, lam[i], val[i].clamp(lo, hi));
        }
        self.seal();
    }
}

/// Exact minimiser for `alpha > 0` by dynamic programming over the state
/// of charge. The cost-to-go is convex in the state; it is carried as the
/// inverse of its derivative, which for an infimal convolution is the sum
/// of the parts' inverse derivatives, and is clamped to the state bounds.
fn exact_quadratic(
    model: &StorageModel<'_>,
    d: &[f64],
    c: &[f64],
    alpha: f64,
    dt_h: f64,
    x: &mut [f64],
) -> Result<()> {
    let n = d.len();
    let k = model.gain * dt_h;
    let (pmin, pmax, cap) = (model.min_power_w, model.max_power_w, model.capacity_kwh);
    // Power chosen at interval t for multiplier λ.
    let power = |t: usize, l: f64| (d[t] + (l * k - c[t]) / (2.0 * alpha)).clamp(pmin, pmax);

    let points = 2 * (n + 1) * (n + 2) + 8;
    // post[t]: state before interval t; pre[t]: unclamped state after it.
    let mut post = PlStack::with_capacity(n + 1, points);
    let mut pre = PlStack::with_capacity(n, points);
    post.push(0.0, model.soc0_kwh);
    post.seal();
    for t in 0..n {
        let (g_lam, g_val) = post.get(t);
        let m = g_lam.len();
        let l_lo = ((pmin - d[t]) * 2.0 * alpha + c[t]) / k;
        let l_hi = ((pmax - d[t]) * 2.0 * alpha + c[t]) / k;
        let drain = model.drain(t);
        // g between its breakpoints i - 1 and i
        let gval = |i: usize, l: f64| -> f64 {
            if i == 0 {
                g_val[0]
            } else if i == m {
                g_val[m - 1]
            } else {
                let (l0, l1) = (g_lam[i - 1], g_lam[i]);
                g_val[i - 1] + (g_val[i] - g_val[i - 1]) * (l - l0) / (l1 - l0)
            }
        };
        let kinks = [l_lo, l_hi];
        let (mut i, mut j) = (0, 0);
        let h_start = pre.lam.len();
        loop {
            let (l, gv) = match (g_lam.get(i), kinks.get(j)) {
                (Some(&lg), Some(&lk)) if lk < lg => {
                    j += 1;
                    (lk, gval(i, lk))
                }
                (Some(&lg), _) => {
                    i += 1;
                    (lg, g_val[i - 1])
                }
                (None, Some(&lk)) => {
                    j += 1;
                    (lk, gval(i, lk))
                }
                (None, None) => break,
            };
            if pre.lam.len() > h_start && pre.lam[pre.lam.len() - 1] == l {
                continue;
            }
            pre.push(l, gv + k * power(t, l) - drain);
        }
        pre.seal();
        let (h_lam, h_val) = pre.get(t);
        if h_val[h_val.len() - 1] < -SOC_SLACK || h_val[0] > cap + SOC_SLACK {
            return Err(Error::Infeasible(format!(
                "heat demand cannot be served from interval {t}"
            )));
        }
        post.push_clamped(h_lam, h_val, 0.0, cap);
    }

    // Free terminal state: the cost-to-go is stationary at λ = 0.
    let (l, v) = post.get(n);
    let mut s = pl_eval(l, v, 0.0);
    for t in (0..n).rev() {
        let (hl, hv) = pre.get(t);
        let lam = pl_inverse(hl, hv, s);
        x[t] = power(t, lam);
        let (gl, gv) = post.get(t);
        s = pl_eval(gl, gv, lam);
    }
    Ok(())
}
