//! Experiment harness: uncontrolled baseline, steering runs, metrics and
//! CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use rayon::prelude::*;

use crate::config::load_scenario_config;
use crate::devices::{baseline_charging, thermal_baseline, Category, Device};
use crate::error::{Error, Result};
use crate::grid::{evaluate_feeder, FeederModel, FlowResult};
use crate::ingest::{load_prices, load_weather};
use crate::scenario::{build_scenario, Scenario};
use crate::steering::{pv_profiles, run_steering, write_trace, HousePlan, IterationTrace, SteeringRunConfig};
use crate::timeseries::{distance_to_flat, EnergyPrice, TimeGrid};

pub const SUMMARY_HEADER: [&str; 8] = [
    "label",
    "peak_w",
    "losses_kwh",
    "distance_w",
    "cost_eur",
    "ev_peak_w",
    "timeshiftable_peak_w",
    "ev_to_ts_peak_ratio",
];

pub const SUBSTATION_HEADER: [&str; 3] = ["timestamp", "power_w", "losses_w"];

pub const CATEGORY_HEADER: [&str; 7] = [
    "timestamp",
    "uncontrollable_w",
    "timeshiftable_w",
    "buffer_ts_w",
    "battery_w",
    "thermal_w",
    "pv_w",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunLabel {
    Baseline,
    Alpha(f64),
}

impl std::fmt::Display for RunLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunLabel::Baseline => f.write_str("baseline"),
            RunLabel::Alpha(a) => write!(f, "alpha={a:.1}"),
        }
    }
}

/// Aggregate power per device category (W), uncontrollable = base load.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryProfiles {
    pub uncontrollable: Vec<f64>,
    pub timeshiftable: Vec<f64>,
    pub buffer_timeshiftable: Vec<f64>,
    pub battery: Vec<f64>,
    pub thermal: Vec<f64>,
    pub pv: Vec<f64>,
}

impl CategoryProfiles {
    fn zeros(n: usize) -> Self {
        Self {
            uncontrollable: vec![0.0; n],
            timeshiftable: vec![0.0; n],
            buffer_timeshiftable: vec![0.0; n],
            battery: vec![0.0; n],
            thermal: vec![0.0; n],
            pv: vec![0.0; n],
        }
    }

    fn series_mut(&mut self, c: Category) -> &mut Vec<f64> {
        match c {
            Category::TimeShiftable => &mut self.timeshiftable,
            Category::BufferTimeShiftable => &mut self.buffer_timeshiftable,
            Category::Battery => &mut self.battery,
            Category::Thermal => &mut self.thermal,
            Category::Pv => &mut self.pv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub label: RunLabel,
    pub grid: TimeGrid,
    pub substation_peak_w: f64,
    pub total_losses_kwh: f64,
    pub distance_to_flat_w: f64,
    pub total_cost_eur: f64,
    pub ev_peak_w: f64,
    pub timeshiftable_peak_w: f64,
    pub flow: FlowResult,
    /// Net power per house.
    pub house_net_w: Vec<Vec<f64>>,
    pub categories: CategoryProfiles,
    pub plans: Vec<HousePlan>,
    pub traces: Vec<IterationTrace>,
}

impl RunReport {
    /// EV-to-time-shiftable peak ratio; infinite when no appliance runs.
    pub fn ev_to_ts_peak_ratio(&self) -> f64 {
        if self.timeshiftable_peak_w > 0.0 {
            self.ev_peak_w / self.timeshiftable_peak_w
        } else if self.ev_peak_w > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Feeder for a scenario from its settings: one segment per house.
pub fn scenario_feeder(scenario: &Scenario) -> FeederModel {
    let f = &scenario.settings.feeder;
    FeederModel::line(scenario.households.len(), f.segment_resistance_ohm, f.v_nominal_v)
}

/// Uncontrolled plans: appliances start at their earliest start, vehicles
/// charge at full power from arrival, batteries idle, heat pumps run at
/// full power whenever the store would otherwise under-run.
pub fn baseline_plans(scenario: &Scenario, ghi: &[f64]) -> Result<Vec<HousePlan>> {
    let n = scenario.grid.len();
    let dt_h = scenario.grid.dt_hours();
    let pv = pv_profiles(scenario, ghi)?;
    scenario
        .households
        .iter()
        .zip(pv)
        .map(|(h, pv)| {
            let devices = h
                .devices
                .iter()
                .zip(pv)
                .map(|(d, pv)| {
                    let plan = match d {
                        Device::TimeShiftable(ts) => {
                            let mut x = vec![0.0; n];
                            for (j, job) in ts.jobs.iter().enumerate() {
                                if job.earliest_start + job.shape_w.len() > n {
                                    return Err(Error::Infeasible(format!("{} job {j} runs past the horizon", ts.name)));
                                }
                                for (k, w) in job.shape_w.iter().enumerate() {
                                    x[job.earliest_start + k] += w;
                                }
                            }
                            x
                        }
                        Device::BufferTimeShiftable(v) => baseline_charging(v, n, dt_h)?,
                        Device::Battery(_) => vec![0.0; n],
                        Device::HeatPump(t) => thermal_baseline(t, t.soc0_kwh_th, &t.heat_demand_kwh_th, dt_h)?,
                        Device::Pv(_) => pv.unwrap_or_else(|| vec![0.0; n]),
                    };
                    Ok(plan)
                })
                .collect::<Result<_>>()
                .map_err(|e| e.context(format!("house {} baseline", h.id)))?;
            Ok(HousePlan { devices })
        })
        .collect()
}

/// Evaluates committed plans on the feeder and fills a report.
pub fn evaluate_plans(
    label: RunLabel,
    scenario: &Scenario,
    prices: &EnergyPrice,
    plans: Vec<HousePlan>,
    traces: Vec<IterationTrace>,
) -> Result<RunReport> {
    crate::timeseries::ensure_same_grid(&scenario.grid, prices.grid())?;
    let grid = scenario.grid;
    let n = grid.len();
    let dt_h = grid.dt_hours();
    let mut cats = CategoryProfiles::zeros(n);
    let mut house_net = Vec::with_capacity(plans.len());
    for (h, plan) in scenario.households.iter().zip(&plans) {
        let mut net = h.base_load.values().to_vec();
        for (a, v) in cats.uncontrollable.iter_mut().zip(h.base_load.values()) {
            *a += v;
        }
        for (d, x) in h.devices.iter().zip(&plan.devices) {
            let series = cats.series_mut(d.category());
            for t in 0..n {
                series[t] += x[t];
                net[t] += x[t];
            }
        }
        house_net.push(net);
    }

    let feeder = scenario_feeder(scenario);
    let flow = if house_net.is_empty() {
        FlowResult {
            substation_w: vec![0.0; n],
            losses_w: vec![0.0; n],
            segment_current_a: vec![vec![0.0; n]; feeder.segments.len()],
        }
    } else {
        let refs: Vec<&[f64]> = house_net.iter().map(|v| v.as_slice()).collect();
        evaluate_feeder(&feeder, &refs)?
    };

    let mut agg = vec![0.0; n];
    for net in &house_net {
        for (a, v) in agg.iter_mut().zip(net) {
            *a += v;
        }
    }
    let distance = scenario
        .settings
        .blocks(&grid)?
        .into_iter()
        .map(|b| distance_to_flat(&agg[b]).powi(2))
        .sum::<f64>()
        .sqrt();

    let export = scenario.settings.export_price_multiplier;
    let pi = prices.values();
    let cost: f64 = house_net
        .iter()
        .map(|net| {
            net.iter()
                .zip(pi)
                .map(|(x, p)| if *x >= 0.0 { p * x } else { export * p * x })
                .sum::<f64>()
        })
        .sum::<f64>()
        * dt_h
        / 1000.0;

    let peak_of = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(RunReport {
        label,
        grid,
        substation_peak_w: flow.peak_w(),
        total_losses_kwh: flow.losses_kwh(dt_h),
        distance_to_flat_w: distance,
        total_cost_eur: cost,
        ev_peak_w: peak_of(&cats.buffer_timeshiftable),
        timeshiftable_peak_w: peak_of(&cats.timeshiftable),
        flow,
        house_net_w: house_net,
        categories: cats,
        plans,
        traces,
    })
}

pub fn run_baseline(scenario: &Scenario, ghi: &[f64], prices: &EnergyPrice) -> Result<RunReport> {
    let plans = baseline_plans(scenario, ghi)?;
    evaluate_plans(RunLabel::Baseline, scenario, prices, plans, Vec::new())
}

/// One steering run at `alpha`, with the run settings of the scenario.
pub fn run_alpha(
    scenario: &Scenario,
    ghi: &[f64],
    prices: &EnergyPrice,
    alpha: f64,
    reference: &[HousePlan],
) -> Result<RunReport> {
    let s = &scenario.settings.steering;
    let cfg = SteeringRunConfig {
        alpha,
        epsilon_w: s.epsilon_w,
        max_iters: s.max_iters,
        deviation_split: s.deviation_split,
    };
    let result = run_steering(scenario, ghi, prices, &cfg, reference)?;
    evaluate_plans(RunLabel::Alpha(alpha), scenario, prices, result.plans, result.traces)
}

/// Half-open time window for CSV extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl std::str::FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or("expected START,END")?;
        let parse = |x: &str| {
            DateTime::parse_from_rfc3339(x.trim())
                .map(|d| d.with_timezone(&Utc))
                .map_err(|e| format!("bad timestamp {x:?}: {e}"))
        };
        let w = Window {
            start: parse(a)?,
            end: parse(b)?,
        };
        if w.end <= w.start {
            return Err("window end must be after start".into());
        }
        Ok(w)
    }
}

fn rows(grid: &TimeGrid, window: Option<Window>) -> Vec<usize> {
    (0..grid.len())
        .filter(|&t| {
            window.is_none_or(|w| {
                let ts = grid.timestamp(t);
                ts >= w.start && ts < w.end
            })
        })
        .collect()
}

fn stamp(grid: &TimeGrid, t: usize) -> String {
    grid.timestamp(t).format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Normalises `-0.0` so outputs do not depend on the sign of zero.
fn num(x: f64) -> String {
    (x + 0.0).to_string()
}

fn write_rows(path: &Path, header: &[String], body: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for r in body {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `substation.csv`, `categories.csv`, `devices.csv` and, for
/// steering runs, `trace.csv` into `dir`.
pub fn write_run(report: &RunReport, scenario: &Scenario, dir: &Path, window: Option<Window>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &report.grid;
    let idx = rows(g, window);
    let header = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let f = &report.flow;
    write_rows(
        &dir.join("substation.csv"),
        &header(&SUBSTATION_HEADER),
        idx.iter().map(|&t| vec![stamp(g, t), num(f.substation_w[t]), num(f.losses_w[t])]),
    )?;

    let c = &report.categories;
    write_rows(
        &dir.join("categories.csv"),
        &header(&CATEGORY_HEADER),
        idx.iter().map(|&t| {
            vec![
                stamp(g, t),
                num(c.uncontrollable[t]),
                num(c.timeshiftable[t]),
                num(c.buffer_timeshiftable[t]),
                num(c.battery[t]),
                num(c.thermal[t]),
                num(c.pv[t]),
            ]
        }),
    )?;

    let mut dev_header = vec!["timestamp".to_string()];
    let mut columns: Vec<&[f64]> = Vec::new();
    for (h, plan) in scenario.households.iter().zip(&report.plans) {
        dev_header.push(format!("house{}_base", h.id));
        columns.push(h.base_load.values());
        for (d, x) in h.devices.iter().zip(&plan.devices) {
            dev_header.push(format!("house{}_{}", h.id, d.name()));
            columns.push(x);
        }
    }
    write_rows(
        &dir.join("devices.csv"),
        &dev_header,
        idx.iter().map(|&t| {
            std::iter::once(stamp(g, t))
                .chain(columns.iter().map(|col| num(col[t])))
                .collect()
        }),
    )?;

    if let RunLabel::Alpha(_) = report.label {
        write_trace(dir.join("trace.csv"), &report.traces)?;
    }
    Ok(())
}

pub fn write_summary(path: &Path, reports: &[RunReport]) -> Result<()> {
    write_rows(
        path,
        &SUMMARY_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        reports.iter().map(|r| {
            vec![
                r.label.to_string(),
                num(r.substation_peak_w),
                num(r.total_losses_kwh),
                num(r.distance_to_flat_w),
                num(r.total_cost_eur),
                num(r.ev_peak_w),
                num(r.timeshiftable_peak_w),
                num(r.ev_to_ts_peak_ratio()),
            ]
        }),
    )
}

/// Directory name for a run inside a comparison output directory.
pub fn run_dir_name(label: RunLabel) -> String {
    match label {
        RunLabel::Baseline => "baseline".into(),
        RunLabel::Alpha(a) => format!("alpha_{a:.1}"),
    }
}

/// Baseline plus one steering run per alpha on one frozen scenario.
pub fn compare_scenario(
    scenario: &Scenario,
    ghi: &[f64],
    prices: &EnergyPrice,
    alphas: &[f64],
) -> Result<Vec<RunReport>> {
    let baseline = run_baseline(scenario, ghi, prices).map_err(|e| e.context("baseline run"))?;
    let steered: Vec<RunReport> = alphas
        .par_iter()
        .map(|&a| {
            run_alpha(scenario, ghi, prices, a, &baseline.plans)
                .map_err(|e| e.context(format!("{} run", RunLabel::Alpha(a))))
        })
        .collect::<Result<_>>()?;
    Ok(std::iter::once(baseline).chain(steered).collect())
}

/// Loads inputs, runs the comparison and writes every CSV under `out_dir`.
/// Files already written are removed if a later step fails.
pub fn run_comparison(
    config_path: &Path,
    weather_path: &Path,
    price_path: &Path,
    out_dir: &Path,
    window: Option<Window>,
) -> Result<Vec<RunReport>> {
    let config = load_scenario_config(config_path)?;
    let grid = config.grid()?;
    let weather = load_weather(weather_path, &grid)?;
    let prices = load_prices(price_path, &grid)?;
    let scenario = build_scenario(&config, &weather)?;
    let reports = compare_scenario(&scenario, &weather.ghi_wm2, &prices, &config.alphas)?;

    let mut created: Vec<PathBuf> = Vec::new();
    let result = (|| {
        if !out_dir.exists() {
            fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
            created.push(out_dir.to_path_buf());
        }
        for r in &reports {
            let dir = out_dir.join(run_dir_name(r.label));
            if !dir.exists() {
                created.push(dir.clone());
            }
            write_run(r, &scenario, &dir, window)?;
        }
        let summary = out_dir.join("summary.csv");
        created.push(summary.clone());
        write_summary(&summary, &reports)
    })();
    if let Err(e) = result {
        for p in created.iter().rev() {
            let _ = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
        }
        return Err(e);
    }
    Ok(reports)
}
