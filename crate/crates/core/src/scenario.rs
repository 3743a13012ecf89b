//! Seeded synthetic neighbourhood generation.
//!
//! A simplified template-based generator: occupancy type and annual
//! consumption are drawn per house, base load follows an occupancy-specific
//! daily template with seasonal modulation and multiplicative jitter, and
//! flexible devices are placed by exact penetration counts over a shuffled
//! house order. Appliance jobs and charging sessions are emitted per planning
//! block so that each one lies entirely inside the block that plans it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, Duration, Timelike, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ApplianceParams, FeederParams, ScenarioConfig, SteeringParams, VehicleParams};
use crate::devices::{
    BufferTimeShiftable, ChargingSession, Device, Job, PvPanel, ThermalBuffer, TimeShiftable,
};
use crate::devices::Buffer;
use crate::error::{Error, Result};
use crate::ingest::WeatherSeries;
use crate::steering::planning_blocks;
use crate::timeseries::{Profile, TimeGrid};

const MAX_REJECTIONS: usize = 10_000;

/// Normal distribution truncated to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncGauss {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

impl TruncGauss {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Self {
        Self { mean, sd, lo, hi }
    }

    /// Truncated at two standard deviations either side of the mean.
    pub fn two_sigma(mean: f64, sd: f64) -> Self {
        Self::new(mean, sd, mean - 2.0 * sd, mean + 2.0 * sd)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.mean, self.sd, self.lo, self.hi].iter().all(|v| v.is_finite());
        if !finite || self.sd < 0.0 {
            return Err(Error::InvalidArgument(format!("invalid truncated gaussian {self:?}")));
        }
        if self.lo > self.hi {
            return Err(Error::InvalidArgument(format!(
                "truncated gaussian lo {} > hi {}",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Rejection-samples `params`; falls back to clipping when the mass inside
/// `[lo, hi]` is too small to hit.
pub fn sample_trunc_gauss<R: Rng + ?Sized>(params: &TruncGauss, rng: &mut R) -> Result<f64> {
    params.validate()?;
    let TruncGauss { mean, sd, lo, hi } = *params;
    if lo == hi {
        return Ok(lo);
    }
    if sd == 0.0 {
        return Ok(mean.clamp(lo, hi));
    }
    for _ in 0..MAX_REJECTIONS {
        let z: f64 = StandardNormal.sample(rng);
        let v = mean + sd * z;
        if (lo..=hi).contains(&v) {
            return Ok(v);
        }
    }
    Ok(mean.clamp(lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    Single,
    Couple,
    Family,
}

impl Occupancy {
    fn index(self) -> usize {
        match self {
            Occupancy::Single => 0,
            Occupancy::Couple => 1,
            Occupancy::Family => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: usize,
    pub occupancy: Occupancy,
    pub annual_kwh: f64,
    /// Uncontrollable consumption.
    pub base_load: Profile,
    pub devices: Vec<Device>,
}

/// Settings carried with a frozen scenario so `run` needs no config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub utc_offset_h: i32,
    pub feeder: FeederParams,
    pub steering: SteeringParams,
    pub export_price_multiplier: f64,
}

impl RunSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            utc_offset_h: cfg.utc_offset_h,
            feeder: cfg.feeder.clone(),
            steering: cfg.steering.clone(),
            export_price_multiplier: cfg.export_price_multiplier,
        }
    }

    pub fn blocks(&self, grid: &TimeGrid) -> Result<Vec<Range<usize>>> {
        planning_blocks(grid, self.utc_offset_h, self.steering.block_hours, self.steering.block_start_h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub grid: TimeGrid,
    pub settings: RunSettings,
    pub households: Vec<Household>,
}

impl Scenario {
    /// Empty neighbourhood on `grid`.
    pub fn empty(grid: TimeGrid, settings: RunSettings) -> Self {
        Self {
            seed: 0,
            grid,
            settings,
            households: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.len();
        for h in &self.households {
            if h.base_load.grid() != &self.grid {
                return Err(Error::IncompatibleGrid(format!("house {} base load", h.id)));
            }
            for d in &h.devices {
                if let Device::HeatPump(hp) = d {
                    if hp.heat_demand_kwh_th.len() != n {
                        return Err(Error::IncompatibleGrid(format!(
                            "house {} {} heat demand",
                            h.id, hp.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn write_scenario(path: impl AsRef<Path>, scenario: &Scenario) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, scenario).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let scenario: Scenario =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        })?;
    scenario.validate()?;
    Ok(scenario)
}

// Relative hourly base-load shapes in local time, weekday then weekend.
const TEMPLATE_SINGLE: [[f64; 24]; 2] = [
    [0.30, 0.25, 0.22, 0.22, 0.22, 0.25, 0.45, 0.80, 0.60, 0.30, 0.28, 0.28,
     0.30, 0.28, 0.28, 0.30, 0.45, 0.80, 1.00, 0.95, 0.90, 0.80, 0.60, 0.40],
    [0.30, 0.25, 0.22, 0.22, 0.22, 0.22, 0.25, 0.35, 0.55, 0.70, 0.75, 0.70,
     0.70, 0.60, 0.55, 0.55, 0.60, 0.75, 0.95, 0.95, 0.90, 0.80, 0.60, 0.40],
];
const TEMPLATE_COUPLE: [[f64; 24]; 2] = [
    [0.30, 0.25, 0.22, 0.22, 0.22, 0.30, 0.60, 0.90, 0.60, 0.35, 0.30, 0.30,
     0.32, 0.30, 0.30, 0.35, 0.50, 0.85, 1.00, 0.95, 0.85, 0.75, 0.55, 0.40],
    [0.30, 0.25, 0.22, 0.22, 0.22, 0.22, 0.28, 0.45, 0.70, 0.80, 0.80, 0.80,
     0.75, 0.65, 0.60, 0.60, 0.70, 0.85, 1.00, 0.95, 0.85, 0.75, 0.55, 0.40],
];
const TEMPLATE_FAMILY: [[f64; 24]; 2] = [
    [0.30, 0.25, 0.22, 0.22, 0.25, 0.35, 0.70, 0.95, 0.65, 0.40, 0.35, 0.40,
     0.45, 0.40, 0.45, 0.60, 0.75, 0.95, 1.00, 0.95, 0.85, 0.70, 0.50, 0.38],
    [0.30, 0.25, 0.22, 0.22, 0.22, 0.25, 0.35, 0.60, 0.85, 0.90, 0.90, 0.95,
     0.90, 0.75, 0.70, 0.70, 0.80, 0.95, 1.00, 0.95, 0.85, 0.70, 0.50, 0.38],
];

fn template(occ: Occupancy) -> &'static [[f64; 24]; 2] {
    match occ {
        Occupancy::Single => &TEMPLATE_SINGLE,
        Occupancy::Couple => &TEMPLATE_COUPLE,
        Occupancy::Family => &TEMPLATE_FAMILY,
    }
}

/// Local clock helpers for a grid.
struct LocalClock {
    grid: TimeGrid,
    offset: Duration,
    per_hour: f64,
}

impl LocalClock {
    fn new(grid: &TimeGrid, utc_offset_h: i32) -> Self {
        Self {
            grid: *grid,
            offset: Duration::hours(i64::from(utc_offset_h)),
            per_hour: 3600.0 / f64::from(grid.interval_s()),
        }
    }

    fn local(&self, t: usize) -> chrono::NaiveDateTime {
        (self.grid.timestamp(t) + self.offset).naive_utc()
    }

    /// Index of local clock time `hours` after the start of block interval `s`.
    fn after(&self, s: usize, hours: f64) -> usize {
        s + (hours * self.per_hour).round() as usize
    }
}

/// Houses receiving a device: the first `floor(n·p)` entries of a shuffled
/// house order.
fn pick_houses(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<bool> {
    let k = ((n as f64) * p + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mask = vec![false; n];
    for &i in &order[..k.min(n)] {
        mask[i] = true;
    }
    mask
}

/// Resamples a piecewise-constant shape onto intervals of `interval_s`.
pub(crate) fn resample_shape(shape_w: &[f64], step_s: u32, interval_s: u32) -> Vec<f64> {
    let total = shape_w.len() as u64 * u64::from(step_s);
    let n = total.div_ceil(u64::from(interval_s)) as usize;
    let mut out = vec![0.0; n];
    for (k, w) in shape_w.iter().enumerate() {
        let a = k as u64 * u64::from(step_s);
        let b = a + u64::from(step_s);
        let mut t = a;
        while t < b {
            let i = (t / u64::from(interval_s)) as usize;
            let end = ((i as u64 + 1) * u64::from(interval_s)).min(b);
            out[i] += w * (end - t) as f64 / f64::from(interval_s);
            t = end;
        }
    }
    out
}

fn base_load(
    rng: &mut ChaCha8Rng,
    clock: &LocalClock,
    occ: Occupancy,
    target_kwh: f64,
    jitter: f64,
) -> Vec<f64> {
    let tpl = template(occ);
    let n = clock.grid.len();
    let mut v = Vec::with_capacity(n);
    for t in 0..n {
        let local = clock.local(t);
        let weekend = matches!(local.weekday(), Weekday::Sat | Weekday::Sun) as usize;
        let season = 1.0
            + 0.25 * (2.0 * std::f64::consts::PI * (f64::from(local.ordinal()) - 15.0) / 365.0).cos();
        let z: f64 = StandardNormal.sample(rng);
        let noise = (1.0 + jitter * z.clamp(-2.0, 2.0)).max(0.05);
        v.push(tpl[weekend][local.hour() as usize] * season * noise);
    }
    let energy_kwh = v.iter().sum::<f64>() * clock.grid.dt_hours() / 1000.0;
    let scale = target_kwh / energy_kwh;
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

fn appliance_jobs(
    rng: &mut ChaCha8Rng,
    clock: &LocalClock,
    blocks: &[Range<usize>],
    p: &ApplianceParams,
) -> Result<Vec<Job>> {
    let shape = resample_shape(&p.shape_w, p.shape_step_s, clock.grid.interval_s());
    let mut jobs = Vec::new();
    for b in blocks {
        let run = rng.random::<f64>() < p.jobs_per_week / 7.0;
        let start_h = sample_trunc_gauss(&p.earliest_start_h, rng)?;
        let window_h = rng.random_range(p.window_h.0..=p.window_h.1);
        if !run || start_h < 12.0 {
            continue;
        }
        let earliest = clock.after(b.start, start_h - 12.0);
        let deadline = (clock.after(earliest, window_h) - 1).min(b.end - 1);
        if earliest + shape.len() <= deadline + 1 {
            jobs.push(Job {
                shape_w: shape.clone(),
                earliest_start: earliest,
                deadline,
            });
        }
    }
    Ok(jobs)
}

fn charging_sessions(
    rng: &mut ChaCha8Rng,
    clock: &LocalClock,
    blocks: &[Range<usize>],
    v: &VehicleParams,
) -> Result<Vec<ChargingSession>> {
    let mut sessions = Vec::new();
    for b in blocks {
        let arr_h = sample_trunc_gauss(&v.arrival_h, rng)?;
        let dep_h = sample_trunc_gauss(&v.departure_h, rng)?;
        let kwh = sample_trunc_gauss(&v.energy_kwh, rng)?;
        let arrival = clock.after(b.start, arr_h - 12.0);
        let departure = clock.after(b.start, dep_h + 12.0);
        if departure > b.end || arrival >= departure {
            continue;
        }
        let deliverable = v.power_w * (departure - arrival) as f64 * clock.grid.dt_hours() / 1000.0;
        sessions.push(ChargingSession {
            arrival,
            departure,
            required_kwh: kwh.min(deliverable).min(v.capacity_wh / 1000.0),
        });
    }
    Ok(sessions)
}

/// Generates `config.n_houses` households on the weather grid.
pub fn generate_scenario(
    config: &ScenarioConfig,
    weather: &WeatherSeries,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Household>> {
    config.validate()?;
    let grid = weather.grid;
    let n = config.n_houses;
    let dev = &config.devices;
    let clock = LocalClock::new(&grid, config.utc_offset_h);
    let settings = RunSettings::from_config(config);
    // Events are emitted for full-length blocks only.
    let block_len = (config.steering.block_hours as f64 * clock.per_hour).round() as usize;
    let blocks: Vec<Range<usize>> = settings
        .blocks(&grid)?
        .into_iter()
        .filter(|b| b.len() == block_len)
        .collect();
    let horizon_years = grid.len() as f64 * grid.dt_hours() / (365.0 * 24.0);

    let occupancy: Vec<Occupancy> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let [s, c, _] = config.occupancy_shares;
            if u < s {
                Occupancy::Single
            } else if u < s + c {
                Occupancy::Couple
            } else {
                Occupancy::Family
            }
        })
        .collect();
    let annual: Vec<f64> = occupancy
        .iter()
        .map(|o| {
            let g = match o {
                Occupancy::Single => &dev.annual_kwh_single,
                Occupancy::Couple => &dev.annual_kwh_couple,
                Occupancy::Family => &dev.annual_kwh_family,
            };
            sample_trunc_gauss(g, rng)
        })
        .collect::<Result<_>>()?;

    let has_pv = pick_houses(rng, n, config.penetration_pv);
    let has_battery = pick_houses(rng, n, config.penetration_battery);
    let has_hp = pick_houses(rng, n, config.penetration_heatpump);
    let mut vehicle_order: Vec<usize> = (0..n).collect();
    vehicle_order.shuffle(rng);
    let n_vehicles = ((n as f64) * config.vehicle_penetration + 1e-9).floor() as usize;
    let n_ev = ((n_vehicles as f64) * config.vehicle_split_ev + 1e-9).floor() as usize;
    let mut vehicle: Vec<Option<bool>> = vec![None; n];
    for (rank, &h) in vehicle_order[..n_vehicles].iter().enumerate() {
        vehicle[h] = Some(rank < n_ev);
    }

    // Heating degree hours over the horizon; heat demand scales with them.
    let hp = &dev.heat_pump;
    let dt_h = grid.dt_hours();
    let degree: Vec<f64> = weather
        .temperature_c
        .iter()
        .map(|t| (hp.base_temp_c - t).max(0.0) * dt_h)
        .collect();
    let degree_total: f64 = degree.iter().sum();

    let mut households = Vec::with_capacity(n);
    for h in 0..n {
        let occ = occupancy[h];
        let target = annual[h] * horizon_years;
        let base = base_load(rng, &clock, occ, target, dev.base_load_jitter);
        let mut devices = Vec::new();

        devices.push(Device::TimeShiftable(TimeShiftable {
            name: "dishwasher".into(),
            jobs: appliance_jobs(rng, &clock, &blocks, &dev.dishwasher)?,
        }));
        devices.push(Device::TimeShiftable(TimeShiftable {
            name: "washing_machine".into(),
            jobs: appliance_jobs(rng, &clock, &blocks, &dev.washing_machine)?,
        }));
        if let Some(is_ev) = vehicle[h] {
            let v = if is_ev { &dev.ev } else { &dev.phev };
            devices.push(Device::BufferTimeShiftable(BufferTimeShiftable {
                name: if is_ev { "ev" } else { "phev" }.into(),
                capacity_kwh: v.capacity_wh / 1000.0,
                max_power_w: v.power_w,
                sessions: charging_sessions(rng, &clock, &blocks, v)?,
            }));
        }
        if has_battery[h] {
            let cap = rng.random_range(dev.battery.capacity_min_wh..=dev.battery.capacity_max_wh) / 1000.0;
            devices.push(Device::Battery(Buffer {
                name: "battery".into(),
                capacity_kwh: cap,
                max_power_w: dev.battery.power_w,
                soc0_kwh: dev.battery.initial_soc * cap,
            }));
        }
        if has_hp[h] {
            let heat_kwh = hp.annual_heat_kwh[occ.index()] * horizon_years;
            let k = if degree_total > 0.0 { heat_kwh / degree_total } else { 0.0 };
            let demand: Vec<f64> = degree.iter().map(|d| k * d).collect();
            let peak = demand.iter().copied().fold(0.0, f64::max);
            let needed_w = 1.1 * peak / (hp.cop * dt_h) * 1000.0;
            devices.push(Device::HeatPump(ThermalBuffer {
                name: "heat_pump".into(),
                store_kwh_th: hp.store_kwh_th,
                cop: hp.cop,
                max_power_w: hp.max_power_w.max(needed_w.ceil()),
                soc0_kwh_th: hp.initial_fill * hp.store_kwh_th,
                heat_demand_kwh_th: demand,
            }));
        }
        if has_pv[h] {
            let area = sample_trunc_gauss(&dev.pv.area_m2, rng)?;
            let eff = rng.random_range(dev.pv.efficiency_min..=dev.pv.efficiency_max);
            devices.push(Device::Pv(PvPanel {
                name: "pv".into(),
                area_m2: area,
                efficiency: eff,
            }));
        }

        households.push(Household {
            id: h,
            occupancy: occ,
            annual_kwh: annual[h],
            base_load: Profile::new(grid, base)?,
            devices,
        });
    }
    Ok(households)
}

/// Generates the full scenario with the config's seed.
pub fn build_scenario(config: &ScenarioConfig, weather: &WeatherSeries) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let households = generate_scenario(config, weather, &mut rng)?;
    Ok(Scenario {
        seed: config.seed,
        grid: weather.grid,
        settings: RunSettings::from_config(config),
        households,
    })
}
