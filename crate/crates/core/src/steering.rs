//! Profile Steering coordinator.
//!
//! The horizon is cut into planning blocks. In each block every household
//! first plans once against a flat target for its own load (initialisation);
//! then the coordinator repeatedly sends each household the aggregate's
//! deviation from the flat target, asks for a candidate plan, and commits the
//! single candidate that shrinks the Euclidean distance the most, until no
//! candidate improves it by at least `epsilon_w` or `max_iters` is reached.

use std::ops::Range;

use chrono::{Duration, Timelike};
use rayon::prelude::*;

use crate::config::DeviationSplit;
use crate::devices::{
    battery_soc_after, beta_for, plan_sessions_into, plan_storage_into, plan_timeshiftable_into,
    thermal_soc_after, ChargingSession, Device, Job, SignalView, StorageModel,
};
use crate::devices::{Buffer, BufferTimeShiftable, ThermalBuffer};
use crate::error::{Error, Result};
use crate::scenario::{Household, Scenario};
use crate::timeseries::{distance_to_flat, mean, EnergyPrice, TimeGrid};

/// Passes over a household's devices when it plans against a target.
const HOUSEHOLD_PASSES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringRunConfig {
    pub alpha: f64,
    pub epsilon_w: f64,
    pub max_iters: usize,
    pub deviation_split: DeviationSplit,
}

impl SteeringRunConfig {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            epsilon_w: 1.0,
            max_iters: 100,
            deviation_split: DeviationSplit::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon_w > 0.0) {
            return Err(Error::InvalidArgument("epsilon_w must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub household: usize,
    pub improvement_w: f64,
    /// Distance to the flat target after committing this iteration.
    pub distance_w: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub block: usize,
    /// Distance to flat after initialisation.
    pub initial_distance_w: f64,
    pub records: Vec<IterationRecord>,
}

/// Committed plans of one house; entry `k` is the power of `devices[k]`
/// (PV included, as its fixed generation).
#[derive(Debug, Clone, PartialEq)]
pub struct HousePlan {
    pub devices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringResult {
    pub plans: Vec<HousePlan>,
    pub traces: Vec<IterationTrace>,
}

/// Planning blocks of `block_hours` starting at local clock hour
/// `block_start_h`; a leading partial block covers the time before the
/// first boundary and the last block is truncated at the horizon.
pub fn planning_blocks(
    grid: &TimeGrid,
    utc_offset_h: i32,
    block_hours: u32,
    block_start_h: u32,
) -> Result<Vec<Range<usize>>> {
    let step = i64::from(grid.interval_s());
    let block_s = i64::from(block_hours) * 3600;
    if block_hours == 0 || block_s % step != 0 {
        return Err(Error::InvalidArgument(format!(
            "block of {block_hours} h is not a whole number of intervals"
        )));
    }
    let local = grid.start() + Duration::hours(i64::from(utc_offset_h));
    let sod = i64::from(local.num_seconds_from_midnight());
    let to_boundary = (i64::from(block_start_h) * 3600 - sod).rem_euclid(86_400) % block_s;
    if to_boundary % step != 0 {
        return Err(Error::InvalidArgument("block boundary not on the grid".into()));
    }
    let n = grid.len();
    let len = (block_s / step) as usize;
    let first = ((to_boundary / step) as usize).min(n);
    let mut blocks = Vec::new();
    if first > 0 {
        blocks.push(0..first);
    }
    let mut s = first;
    while s < n {
        blocks.push(s..(s + len).min(n));
        s += len;
    }
    Ok(blocks)
}

/// A device restricted to one planning block, indices block-local.
#[derive(Debug, Clone)]
pub(crate) enum BlockDevice<'a> {
    Shiftable(Vec<Job>),
    Vehicle(&'a BufferTimeShiftable, Vec<ChargingSession>),
    Battery(&'a Buffer, f64),
    Thermal(&'a ThermalBuffer, f64, &'a [f64]),
    /// Not planned (PV); its profile lives in the household's fixed load.
    Fixed,
}

/// One household within one block.
#[derive(Debug, Clone)]
pub struct BlockHousehold<'a> {
    pub(crate) id: usize,
    /// Base load plus PV.
    pub(crate) fixed: Vec<f64>,
    pub(crate) devices: Vec<BlockDevice<'a>>,
}

impl BlockHousehold<'_> {
    pub(crate) fn total(&self, plans: &[Vec<f64>]) -> Vec<f64> {
        let mut t = self.fixed.clone();
        for p in plans {
            for (a, v) in t.iter_mut().zip(p) {
                *a += v;
            }
        }
        t
    }
}

/// Per-house state carried from block to block (storage levels).
#[derive(Debug, Clone)]
pub(crate) struct CarryState {
    soc: Vec<Vec<Option<f64>>>,
}

impl CarryState {
    pub(crate) fn new(households: &[Household]) -> Self {
        let soc = households
            .iter()
            .map(|h| {
                h.devices
                    .iter()
                    .map(|d| match d {
                        Device::Battery(b) => Some(b.soc0_kwh),
                        Device::HeatPump(t) => Some(t.soc0_kwh_th),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        Self { soc }
    }

    pub(crate) fn advance(&mut self, households: &[Household], block: &Range<usize>, plans: &[Vec<Vec<f64>>], dt_h: f64) {
        for (h, house) in households.iter().enumerate() {
            for (k, d) in house.devices.iter().enumerate() {
                let Some(s) = self.soc[h][k] else { continue };
                self.soc[h][k] = Some(match d {
                    Device::Battery(_) => battery_soc_after(s, &plans[h][k], dt_h),
                    Device::HeatPump(t) => thermal_soc_after(
                        s,
                        t.cop,
                        &plans[h][k],
                        &t.heat_demand_kwh_th[block.clone()],
                        dt_h,
                    ),
                    _ => unreachable!(),
                });
            }
        }
    }
}

/// Restricts `house` to `block`. Jobs and sessions are assigned to the
/// block containing their earliest start / arrival and must end inside it.
pub(crate) fn block_household<'a>(
    house: &'a Household,
    pv: &[Option<Vec<f64>>],
    block: &Range<usize>,
    soc: &[Option<f64>],
) -> Result<BlockHousehold<'a>> {
    let b0 = block.start;
    let mut fixed = house.base_load.values()[block.clone()].to_vec();
    let mut devices = Vec::with_capacity(house.devices.len());
    for (k, d) in house.devices.iter().enumerate() {
        let bd = match d {
            Device::TimeShiftable(ts) => {
                let mut jobs = Vec::new();
                for (j, job) in ts.jobs.iter().enumerate() {
                    if !block.contains(&job.earliest_start) {
                        continue;
                    }
                    if job.deadline >= block.end {
                        return Err(Error::Infeasible(format!(
                            "house {} {} job {j} crosses the planning block ending at interval {}",
                            house.id, ts.name, block.end
                        )));
                    }
                    jobs.push(Job {
                        shape_w: job.shape_w.clone(),
                        earliest_start: job.earliest_start - b0,
                        deadline: job.deadline - b0,
                    });
                }
                BlockDevice::Shiftable(jobs)
            }
            Device::BufferTimeShiftable(v) => {
                let mut sessions = Vec::new();
                for (i, s) in v.sessions.iter().enumerate() {
                    if !block.contains(&s.arrival) {
                        continue;
                    }
                    if s.departure > block.end {
                        return Err(Error::Infeasible(format!(
                            "house {} {} session {i} crosses the planning block ending at interval {}",
                            house.id, v.name, block.end
                        )));
                    }
                    sessions.push(ChargingSession {
                        arrival: s.arrival - b0,
                        departure: s.departure - b0,
                        required_kwh: s.required_kwh,
                    });
                }
                BlockDevice::Vehicle(v, sessions)
            }
            Device::Battery(b) => BlockDevice::Battery(b, soc[k].unwrap_or(b.soc0_kwh)),
            Device::HeatPump(t) => BlockDevice::Thermal(
                t,
                soc[k].unwrap_or(t.soc0_kwh_th),
                &t.heat_demand_kwh_th[block.clone()],
            ),
            Device::Pv(_) => {
                if let Some(p) = &pv[k] {
                    for (f, v) in fixed.iter_mut().zip(&p[block.clone()]) {
                        *f += v;
                    }
                }
                BlockDevice::Fixed
            }
        };
        devices.push(bd);
    }
    Ok(BlockHousehold {
        id: house.id,
        fixed,
        devices,
    })
}

/// Plans one device against a view; `warm` seeds the storage solvers.
pub(crate) fn plan_block_device(
    dev: &BlockDevice<'_>,
    sig: SignalView<'_>,
    warm: Option<&[f64]>,
    out: &mut [f64],
) -> Result<()> {
    match dev {
        BlockDevice::Shiftable(jobs) => plan_timeshiftable_into(jobs, sig, out),
        BlockDevice::Vehicle(v, sessions) => plan_sessions_into(v, sessions, sig, out),
        BlockDevice::Battery(b, soc0) => plan_storage_into(StorageModel::battery(b, *soc0), sig, warm, out),
        BlockDevice::Thermal(t, soc0, drain) => {
            plan_storage_into(StorageModel::thermal(t, *soc0, drain), sig, warm, out)
        }
        BlockDevice::Fixed => {
            out.fill(0.0);
            Ok(())
        }
    }
}

/// `β` for a household signal. With `alpha = 0` the scale cannot change the
/// argmin, so it is fixed at 1 to keep tie-breaking independent of the target.
fn price_scale(target: &[f64], prices: &[f64], alpha: f64) -> f64 {
    if alpha == 0.0 {
        1.0
    } else {
        beta_for(target, prices)
    }
}

/// Household-level planning: block coordinate descent over its devices, each
/// planned against the target minus everything else in the house, all with
/// the household's price scale.
pub(crate) fn plan_household(
    hh: &BlockHousehold<'_>,
    target: &[f64],
    prices: &[f64],
    alpha: f64,
    dt_h: f64,
    current: Option<&[Vec<f64>]>,
) -> Result<Vec<Vec<f64>>> {
    let n = target.len();
    let beta = price_scale(target, prices, alpha);
    let mut plans: Vec<Vec<f64>> = match current {
        Some(c) => c.to_vec(),
        None => vec![vec![0.0; n]; hh.devices.len()],
    };
    let mut total = hh.total(&plans);
    let mut desired = vec![0.0; n];
    let mut next = vec![0.0; n];
    let passes = if alpha == 0.0 { 1 } else { HOUSEHOLD_PASSES };
    for pass in 0..passes {
        let mut changed = false;
        for (k, dev) in hh.devices.iter().enumerate() {
            if matches!(dev, BlockDevice::Fixed) {
                continue;
            }
            for t in 0..n {
                desired[t] = target[t] - (total[t] - plans[k][t]);
            }
            let sig = SignalView {
                desired: &desired,
                prices,
                alpha,
                beta,
                dt_h,
            };
            let warm = (current.is_some() || pass > 0).then_some(plans[k].as_slice());
            plan_block_device(dev, sig, warm, &mut next)?;
            if next != plans[k] {
                changed = true;
                for t in 0..n {
                    total[t] += next[t] - plans[k][t];
                }
                plans[k].copy_from_slice(&next);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(plans)
}

/// Initialisation phase for one block: each household plans once against a
/// flat target at its own mean load. Returns the committed plans and the
/// aggregate.
pub fn initialize(
    households: &[BlockHousehold<'_>],
    prices: &[f64],
    alpha: f64,
    dt_h: f64,
    reference: &[Vec<Vec<f64>>],
) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>)> {
    let n = prices.len();
    let plans: Vec<Vec<Vec<f64>>> = households
        .par_iter()
        .zip(reference)
        .map(|(hh, refp)| {
            let level = mean(&hh.total(refp));
            plan_household(hh, &vec![level; n], prices, alpha, dt_h, None)
                .map_err(|e| e.context(format!("household {} initialisation", hh.id)))
        })
        .collect::<Result<_>>()?;
    let agg = aggregate_block(households, &plans, n);
    Ok((plans, agg))
}

pub(crate) fn aggregate_block(households: &[BlockHousehold<'_>], plans: &[Vec<Vec<f64>>], n: usize) -> Vec<f64> {
    let mut agg = vec![0.0; n];
    for (hh, p) in households.iter().zip(plans) {
        for (a, v) in agg.iter_mut().zip(hh.total(p)) {
            *a += v;
        }
    }
    agg
}

/// Iteration phase for one block.
pub fn iterate_block(
    households: &[BlockHousehold<'_>],
    mut plans: Vec<Vec<Vec<f64>>>,
    prices: &[f64],
    cfg: &SteeringRunConfig,
    dt_h: f64,
) -> Result<(Vec<Vec<Vec<f64>>>, IterationTrace)> {
    let n = prices.len();
    let mut totals: Vec<Vec<f64>> = households
        .iter()
        .zip(&plans)
        .map(|(hh, p)| hh.total(p))
        .collect();
    let mut agg = vec![0.0; n];
    for t in &totals {
        for (a, v) in agg.iter_mut().zip(t) {
            *a += v;
        }
    }
    let share = match cfg.deviation_split {
        DeviationSplit::Full => 1.0,
        DeviationSplit::Equal => 1.0 / households.len().max(1) as f64,
    };
    let mut trace = IterationTrace {
        block: 0,
        initial_distance_w: distance_to_flat(&agg),
        records: Vec::new(),
    };
    if households.is_empty() {
        return Ok((plans, trace));
    }

    for iter in 0..cfg.max_iters {
        let level = mean(&agg);
        let dist = distance_to_flat(&agg);
        let candidates: Vec<(f64, Vec<Vec<f64>>, Vec<f64>)> = households
            .par_iter()
            .enumerate()
            .map(|(h, hh)| {
                let target: Vec<f64> = (0..n)
                    .map(|t| totals[h][t] - share * (agg[t] - level))
                    .collect();
                let cand = plan_household(hh, &target, prices, cfg.alpha, dt_h, Some(&plans[h]))
                    .map_err(|e| e.context(format!("iteration {iter}, household {}", hh.id)))?;
                let cand_total = hh.total(&cand);
                let new_dist = (0..n)
                    .map(|t| {
                        let e = agg[t] + (cand_total[t] - totals[h][t]) - level;
                        e * e
                    })
                    .sum::<f64>()
                    .sqrt();
                Ok((dist - new_dist, cand, cand_total))
            })
            .collect::<Result<_>>()?;

        let mut best: Option<usize> = None;
        for (h, c) in candidates.iter().enumerate() {
            if best.is_none_or(|b| c.0 > candidates[b].0) {
                best = Some(h);
            }
        }
        let Some(w) = best else { break };
        let improvement = candidates[w].0;
        if !(improvement >= cfg.epsilon_w) {
            break;
        }
        let (_, cand, cand_total) = candidates.into_iter().nth(w).unwrap();
        for t in 0..n {
            agg[t] += cand_total[t] - totals[w][t];
        }
        totals[w] = cand_total;
        plans[w] = cand;
        trace.records.push(IterationRecord {
            iter,
            household: households[w].id,
            improvement_w: improvement,
            distance_w: distance_to_flat(&agg),
        });
    }
    Ok((plans, trace))
}

/// Computes each house's PV generation over the whole horizon.
pub(crate) fn pv_profiles(scenario: &Scenario, ghi: &[f64]) -> Result<Vec<Vec<Option<Vec<f64>>>>> {
    if ghi.len() != scenario.grid.len() {
        return Err(Error::IncompatibleGrid(format!(
            "irradiance has {} intervals, scenario {}",
            ghi.len(),
            scenario.grid.len()
        )));
    }
    scenario
        .households
        .iter()
        .map(|h| {
            h.devices
                .iter()
                .map(|d| match d {
                    Device::Pv(p) => Ok(Some(p.profile(&scenario.grid, ghi)?.into_values())),
                    _ => Ok(None),
                })
                .collect()
        })
        .collect()
}

/// Block plans for the uncontrolled schedule, used as the initialisation
/// reference level and as the fallback starting point.
pub(crate) type BlockPlans = Vec<Vec<Vec<f64>>>;

/// Runs both phases over every block and concatenates the committed plans.
///
/// `reference` holds the uncontrolled full-horizon plans (same layout as the
/// result). It sets each household's initial flat level, and at `alpha = 1`
/// a block whose initialisation is farther from flat than the uncontrolled
/// schedule starts iterating from the uncontrolled schedule instead.
pub fn run_steering(
    scenario: &Scenario,
    ghi: &[f64],
    prices: &EnergyPrice,
    cfg: &SteeringRunConfig,
    reference: &[HousePlan],
) -> Result<SteeringResult> {
    cfg.validate()?;
    crate::timeseries::ensure_same_grid(&scenario.grid, prices.grid())?;
    let grid = scenario.grid;
    let dt_h = grid.dt_hours();
    let n = grid.len();
    let pv = pv_profiles(scenario, ghi)?;
    let blocks = scenario.settings.blocks(&grid)?;
    let houses = &scenario.households;

    let mut out: Vec<HousePlan> = houses
        .iter()
        .zip(&pv)
        .map(|(h, pv)| HousePlan {
            devices: h
                .devices
                .iter()
                .zip(pv)
                .map(|(_, p)| p.clone().unwrap_or_else(|| vec![0.0; n]))
                .collect(),
        })
        .collect();
    let mut carry = CarryState::new(houses);
    let mut traces = Vec::with_capacity(blocks.len());

    for (b, block) in blocks.iter().enumerate() {
        let ctx = |e: Error| e.context(format!("block {b}"));
        let hhs: Vec<BlockHousehold<'_>> = houses
            .iter()
            .enumerate()
            .map(|(h, house)| block_household(house, &pv[h], block, &carry.soc[h]))
            .collect::<Result<_>>()
            .map_err(ctx)?;
        let block_prices = &prices.values()[block.clone()];
        let reference_block: BlockPlans = reference
            .iter()
            .zip(&hhs)
            .map(|(r, hh)| {
                r.devices
                    .iter()
                    .zip(&hh.devices)
                    .map(|(p, d)| match d {
                        BlockDevice::Fixed => vec![0.0; block.len()],
                        _ => p[block.clone()].to_vec(),
                    })
                    .collect()
            })
            .collect();

        let (mut plans, agg) = initialize(&hhs, block_prices, cfg.alpha, dt_h, &reference_block).map_err(ctx)?;
        if cfg.alpha == 1.0 {
            let ref_agg = aggregate_block(&hhs, &reference_block, block.len());
            if distance_to_flat(&agg) > distance_to_flat(&ref_agg) && reference_is_feasible(&hhs, &reference_block, dt_h) {
                plans = reference_block;
            }
        }
        let (plans, mut trace) = iterate_block(&hhs, plans, block_prices, cfg, dt_h).map_err(ctx)?;
        trace.block = b;
        traces.push(trace);

        carry.advance(houses, block, &plans, dt_h);
        for (h, hp) in plans.iter().enumerate() {
            for (k, d) in hhs[h].devices.iter().enumerate() {
                if !matches!(d, BlockDevice::Fixed) {
                    out[h].devices[k][block.clone()].copy_from_slice(&hp[k]);
                }
            }
        }
    }
    Ok(SteeringResult { plans: out, traces })
}

/// The uncontrolled storage plans were computed from the initial levels;
/// they can seed a block only if they stay feasible from the carried ones.
fn reference_is_feasible(hhs: &[BlockHousehold<'_>], reference: &BlockPlans, dt_h: f64) -> bool {
    hhs.iter().zip(reference).all(|(hh, plans)| {
        hh.devices.iter().zip(plans).all(|(d, p)| match d {
            BlockDevice::Battery(b, soc0) => StorageModel::battery(b, *soc0).is_feasible(p, dt_h),
            BlockDevice::Thermal(t, soc0, drain) => StorageModel::thermal(t, *soc0, drain).is_feasible(p, dt_h),
            _ => true,
        })
    })
}

/// Price-only reference: every device planned once per block against an
/// `alpha = 0` signal, with no household coordination and no iteration.
/// The desired profile (which `alpha = 0` ignores) and the price scale are
/// the household's initialisation target, as in [`run_steering`].
pub fn run_price_only(
    scenario: &Scenario,
    ghi: &[f64],
    prices: &EnergyPrice,
    reference: &[HousePlan],
) -> Result<Vec<HousePlan>> {
    crate::timeseries::ensure_same_grid(&scenario.grid, prices.grid())?;
    let grid = scenario.grid;
    let dt_h = grid.dt_hours();
    let n = grid.len();
    let pv = pv_profiles(scenario, ghi)?;
    let houses = &scenario.households;
    let mut out: Vec<HousePlan> = pv
        .iter()
        .map(|pv| HousePlan {
            devices: pv.iter().map(|p| p.clone().unwrap_or_else(|| vec![0.0; n])).collect(),
        })
        .collect();
    let mut carry = CarryState::new(houses);
    for block in scenario.settings.blocks(&grid)? {
        let block_prices = &prices.values()[block.clone()];
        let mut plans = Vec::with_capacity(houses.len());
        for (h, house) in houses.iter().enumerate() {
            let hh = block_household(house, &pv[h], &block, &carry.soc[h])?;
            let refp: Vec<Vec<f64>> = reference[h]
                .devices
                .iter()
                .zip(&hh.devices)
                .map(|(p, d)| match d {
                    BlockDevice::Fixed => vec![0.0; block.len()],
                    _ => p[block.clone()].to_vec(),
                })
                .collect();
            let target = vec![mean(&hh.total(&refp)); block.len()];
            let sig = SignalView {
                desired: &target,
                prices: block_prices,
                alpha: 0.0,
                beta: price_scale(&target, block_prices, 0.0),
                dt_h,
            };
            let mut house_plans = Vec::with_capacity(hh.devices.len());
            for (k, d) in hh.devices.iter().enumerate() {
                let mut x = vec![0.0; block.len()];
                plan_block_device(d, sig, None, &mut x)?;
                if !matches!(d, BlockDevice::Fixed) {
                    out[h].devices[k][block.clone()].copy_from_slice(&x);
                }
                house_plans.push(x);
            }
            plans.push(house_plans);
        }
        carry.advance(houses, &block, &plans, dt_h);
    }
    Ok(out)
}

/// Writes traces as `block,iter,household,improvement_w,distance_w`.
pub fn write_trace(path: impl AsRef<std::path::Path>, traces: &[IterationTrace]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["block", "iter", "household", "improvement_w", "distance_w"])
        .map_err(io)?;
    for tr in traces {
        for r in &tr.records {
            w.write_record([
                tr.block.to_string(),
                r.iter.to_string(),
                r.household.to_string(),
                r.improvement_w.to_string(),
                r.distance_w.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
