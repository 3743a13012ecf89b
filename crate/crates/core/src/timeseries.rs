//! Time grid, power profiles and the profile arithmetic shared by every
//! other module.
//!
//! Sign convention: consumption is positive, generation and discharge are
//! negative. Powers are in W, prices in EUR/kWh.

use std::ops::Range;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_S: u32 = 900;

/// Uniform sampling grid. Interval `i` covers `[start + i·Δ, start + (i+1)·Δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: DateTime<Utc>,
    interval_s: u32,
    n_intervals: usize,
}

impl TimeGrid {
    pub fn new(start: DateTime<Utc>, interval_s: u32, n_intervals: usize) -> Result<Self> {
        if interval_s == 0 {
            return Err(Error::InvalidArgument("interval_s must be positive".into()));
        }
        if n_intervals == 0 {
            return Err(Error::InvalidArgument("n_intervals must be positive".into()));
        }
        Ok(Self {
            start,
            interval_s,
            n_intervals,
        })
    }

    /// Grid spanning `days` whole days from `start`.
    pub fn days(start: DateTime<Utc>, interval_s: u32, days: u32) -> Result<Self> {
        if interval_s == 0 || 86_400 % interval_s != 0 {
            return Err(Error::InvalidArgument(format!(
                "interval_s {interval_s} must divide one day"
            )));
        }
        Self::new(start, interval_s, (86_400 / interval_s * days) as usize)
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn interval_s(&self) -> u32 {
        self.interval_s
    }

    pub fn len(&self) -> usize {
        self.n_intervals
    }

    pub fn is_empty(&self) -> bool {
        self.n_intervals == 0
    }

    pub fn dt_hours(&self) -> f64 {
        f64::from(self.interval_s) / 3600.0
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.n_intervals)
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::seconds(i64::from(self.interval_s) * index as i64)
    }

    /// Index of the interval starting exactly at `ts`, if any.
    pub fn index_of(&self, ts: DateTime<Utc>) -> Option<usize> {
        let secs = (ts - self.start).num_seconds();
        if secs < 0 || secs % i64::from(self.interval_s) != 0 {
            return None;
        }
        let idx = (secs / i64::from(self.interval_s)) as usize;
        (idx < self.n_intervals).then_some(idx)
    }

    pub fn intervals_per_day(&self) -> Option<usize> {
        (86_400 % self.interval_s == 0).then(|| (86_400 / self.interval_s) as usize)
    }

    /// Sub-grid covering `range` of this grid.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_intervals {
            return Err(Error::InvalidArgument(format!(
                "slice {range:?} outside grid of {} intervals",
                self.n_intervals
            )));
        }
        Self::new(self.timestamp(range.start), self.interval_s, range.len())
    }
}

fn check_values(grid: &TimeGrid, values: &[f64], what: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::IncompatibleGrid(format!(
            "{what} has {} values for a grid of {} intervals",
            values.len(),
            grid.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "{what} value at interval {i} is not finite"
        )));
    }
    Ok(())
}

/// Power time series in W on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl Profile {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values, "profile")?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid,
        }
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Net energy over the horizon in kWh.
    pub fn energy_kwh(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dt_hours() / 1000.0
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        let grid = self.grid.slice(range.clone())?;
        Ok(Self {
            grid,
            values: self.values[range].to_vec(),
        })
    }

    pub(crate) fn from_parts_unchecked(grid: TimeGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }
}

/// Energy price series in EUR/kWh. Negative prices are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyPrice {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl EnergyPrice {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values, "price series")?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        let grid = self.grid.slice(range.clone())?;
        Ok(Self {
            grid,
            values: self.values[range].to_vec(),
        })
    }
}

pub(crate) fn ensure_same_grid(a: &TimeGrid, b: &TimeGrid) -> Result<()> {
    if a != b {
        return Err(Error::IncompatibleGrid(format!(
            "{} x {}s x {} vs {} x {}s x {}",
            a.start(),
            a.interval_s(),
            a.len(),
            b.start(),
            b.interval_s(),
            b.len()
        )));
    }
    Ok(())
}

pub fn euclidean_distance(a: &Profile, b: &Profile) -> Result<f64> {
    ensure_same_grid(&a.grid, &b.grid)?;
    Ok(distance(&a.values, &b.values))
}

/// Pointwise sum. An empty list yields the all-zero profile on `grid`.
pub fn aggregate(grid: &TimeGrid, profiles: &[Profile]) -> Result<Profile> {
    let mut out = vec![0.0; grid.len()];
    for p in profiles {
        ensure_same_grid(grid, &p.grid)?;
        add_assign(&mut out, &p.values);
    }
    Ok(Profile::from_parts_unchecked(*grid, out))
}

/// Constant profile at the mean of `agg`; keeps the horizon energy.
pub fn flat_target(agg: &Profile) -> Profile {
    Profile::constant(agg.grid, mean(&agg.values))
}

// Slice-level kernels used on the hot planning paths.

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().sum::<f64>() / a.len() as f64
    }
}

/// Distance of `a` to its own flat target.
pub(crate) fn distance_to_flat(a: &[f64]) -> f64 {
    let m = mean(a);
    a.iter().map(|x| (x - m) * (x - m)).sum::<f64>().sqrt()
}

pub(crate) fn add_assign(acc: &mut [f64], x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, v) in acc.iter_mut().zip(x) {
        *a += v;
    }
}
