//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use chrono::{TimeZone, Utc};
use feeder_dsm::devices::{
    plan_buffer, plan_buffer_timeshiftable, plan_thermal, plan_timeshiftable, Buffer,
    BufferTimeShiftable, ChargingSession, Job, SteeringSignal, ThermalBuffer, TimeShiftable,
};
use feeder_dsm::{EnergyPrice, Profile, TimeGrid};
use rand::Rng;

pub const DT_H: f64 = 0.25;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap(), 900, n).unwrap()
}

pub fn signal(d: &[f64], p: &[f64], alpha: f64) -> SteeringSignal {
    let g = grid(d.len());
    SteeringSignal::new(
        Profile::new(g, d.to_vec()).unwrap(),
        EnergyPrice::new(g, p.to_vec()).unwrap(),
        alpha,
    )
    .unwrap()
}

/// `α Σ (x − d)² + (1 − α) β Σ π x Δt`, optionally with mean-centred prices.
pub fn j(x: &[f64], sig: &SteeringSignal, centred: bool) -> f64 {
    let d = sig.desired.values();
    let p = sig.prices.values();
    let m = if centred { p.iter().sum::<f64>() / p.len() as f64 } else { 0.0 };
    let a = sig.alpha;
    let mut dev = 0.0;
    let mut cost = 0.0;
    for t in 0..x.len() {
        dev += (x[t] - d[t]) * (x[t] - d[t]);
        cost += (p[t] - m) * x[t] * DT_H;
    }
    a * dev + (1.0 - a) * sig.beta() * cost
}

/// Every combination of start times.
pub fn ts_oracle(jobs: &[Job], sig: &SteeringSignal) -> f64 {
    let n = sig.desired.len();
    let ranges: Vec<Vec<usize>> = jobs
        .iter()
        .map(|jb| (jb.earliest_start..=jb.deadline + 1 - jb.shape_w.len()).collect())
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; jobs.len()];
    loop {
        let mut x = vec![0.0; n];
        for (k, jb) in jobs.iter().enumerate() {
            let s = ranges[k][idx[k]];
            for (i, w) in jb.shape_w.iter().enumerate() {
                x[s + i] += w;
            }
        }
        best = best.min(j(&x, sig, false));
        let mut k = 0;
        loop {
            if k == jobs.len() {
                return best;
            }
            idx[k] += 1;
            if idx[k] < ranges[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Grid search over the power of each interval in disjoint sessions; the
/// last interval of each window absorbs the remaining energy.
pub fn bts_grid_oracle(dev: &BufferTimeShiftable, sig: &SteeringSignal, levels: usize) -> f64 {
    let n = sig.desired.len();
    let mut x = vec![0.0; n];
    // Sessions are disjoint and J is separable, so sessions are independent.
    for s in &dev.sessions {
        let w: Vec<usize> = (s.arrival..s.departure).collect();
        let need = s.required_kwh * 1000.0 / DT_H;
        let mut best = f64::INFINITY;
        let mut best_x = vec![0.0; w.len()];
        let free = w.len() - 1;
        let mut idx = vec![0usize; free];
        loop {
            let mut y: Vec<f64> = idx
                .iter()
                .map(|i| dev.max_power_w * *i as f64 / (levels - 1) as f64)
                .collect();
            let rest = need - y.iter().sum::<f64>();
            if (-1e-9..=dev.max_power_w + 1e-9).contains(&rest) {
                y.push(rest.clamp(0.0, dev.max_power_w));
                let mut xs = vec![0.0; n];
                for (k, t) in w.iter().enumerate() {
                    xs[*t] = y[k];
                }
                let v = j_window(&xs, sig, &w);
                if v < best {
                    best = v;
                    best_x = y;
                }
            }
            let mut k = 0;
            loop {
                if k == free {
                    break;
                }
                idx[k] += 1;
                if idx[k] < levels {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == free {
                break;
            }
        }
        assert!(best.is_finite(), "no grid point meets the energy");
        for (k, t) in w.iter().enumerate() {
            x[*t] = best_x[k];
        }
    }
    j(&x, sig, false)
}

fn j_window(x: &[f64], sig: &SteeringSignal, w: &[usize]) -> f64 {
    let d = sig.desired.values();
    let p = sig.prices.values();
    let a = sig.alpha;
    w.iter()
        .map(|&t| a * (x[t] - d[t]).powi(2) + (1.0 - a) * sig.beta() * p[t] * x[t] * DT_H)
        .sum()
}

/// Linear-programme vertices for `alpha = 0`: every interval empty, full or
/// (for at most one interval per session) fractional.
pub fn bts_vertex_oracle(dev: &BufferTimeShiftable, sig: &SteeringSignal) -> f64 {
    let n = sig.desired.len();
    let mut x = vec![0.0; n];
    for s in &dev.sessions {
        let w: Vec<usize> = (s.arrival..s.departure).collect();
        let need = s.required_kwh * 1000.0 / DT_H;
        let mut best = f64::INFINITY;
        let mut best_y = vec![];
        for mask in 0..(1usize << w.len()) {
            let full = mask.count_ones() as f64 * dev.max_power_w;
            for frac in std::iter::once(None).chain((0..w.len()).map(Some)) {
                if let Some(f) = frac {
                    if mask & (1 << f) != 0 {
                        continue;
                    }
                }
                let rest = need - full;
                let y: Vec<f64> = (0..w.len())
                    .map(|k| {
                        if mask & (1 << k) != 0 {
                            dev.max_power_w
                        } else if frac == Some(k) {
                            rest
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let ok = match frac {
                    None => rest.abs() < 1e-9,
                    Some(_) => (0.0..=dev.max_power_w).contains(&rest),
                };
                if !ok {
                    continue;
                }
                let mut xs = vec![0.0; n];
                for (k, t) in w.iter().enumerate() {
                    xs[*t] = y[k];
                }
                let v = j_window(&xs, sig, &w);
                if v < best {
                    best = v;
                    best_y = y;
                }
            }
        }
        for (k, t) in w.iter().enumerate() {
            x[*t] = best_y[k];
        }
    }
    j(&x, sig, false)
}

/// Grid search over per-interval power for a storage device; `None` if no
/// grid point is feasible.
#[allow(clippy::too_many_arguments)]
pub fn storage_grid_oracle(
    pmin: f64,
    pmax: f64,
    gain: f64,
    cap: f64,
    soc0: f64,
    drain: &[f64],
    sig: &SteeringSignal,
    levels: usize,
) -> Option<f64> {
    let n = sig.desired.len();
    let vals: Vec<f64> = (0..levels)
        .map(|i| pmin + (pmax - pmin) * i as f64 / (levels - 1) as f64)
        .collect();
    let mut best: Option<f64> = None;
    let mut x = vec![0.0; n];
    fn rec(
        t: usize,
        soc: f64,
        x: &mut [f64],
        vals: &[f64],
        gain: f64,
        cap: f64,
        drain: &[f64],
        sig: &SteeringSignal,
        best: &mut Option<f64>,
    ) {
        if t == x.len() {
            let v = j(x, sig, true);
            if best.is_none_or(|b| v < b) {
                *best = Some(v);
            }
            return;
        }
        for &p in vals {
            let s = soc + gain * p * DT_H - drain[t];
            if (-1e-9..=cap + 1e-9).contains(&s) {
                x[t] = p;
                rec(t + 1, s, x, vals, gain, cap, drain, sig, best);
            }
        }
    }
    rec(0, soc0, &mut x, &vals, gain, cap, drain, sig, &mut best);
    best
}

pub fn random_signal<R: Rng>(rng: &mut R, n: usize) -> SteeringSignal {
    let alpha = [0.0, 0.5, 1.0, rng.random_range(0.05..0.95)][rng.random_range(0..4)];
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-3000.0..3000.0)).collect();
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.08)).collect();
    signal(&d, &p, alpha)
}

pub fn random_jobs<R: Rng>(rng: &mut R, n: usize) -> Vec<Job> {
    let count = rng.random_range(1..=2);
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..=3.min(n));
            let shape: Vec<f64> = (0..len).map(|_| rng.random_range(100.0..2000.0)).collect();
            let earliest = rng.random_range(0..=n - len);
            let deadline = rng.random_range(earliest + len - 1..n);
            Job {
                shape_w: shape,
                earliest_start: earliest,
                deadline,
            }
        })
        .collect()
}

pub fn random_vehicle<R: Rng>(rng: &mut R, n: usize) -> BufferTimeShiftable {
    let pmax = rng.random_range(2000.0..8000.0);
    let mut sessions = Vec::new();
    let split = if n >= 4 && rng.random_bool(0.5) { rng.random_range(2..=n - 2) } else { n };
    for (a, b) in [(0, split), (split, n)] {
        if b > a {
            let max_kwh = pmax * (b - a) as f64 * DT_H / 1000.0;
            sessions.push(ChargingSession {
                arrival: a,
                departure: b,
                required_kwh: rng.random_range(0.0..1.0) * max_kwh,
            });
        }
    }
    BufferTimeShiftable {
        name: "ev".into(),
        capacity_kwh: 100.0,
        max_power_w: pmax,
        sessions,
    }
}

pub fn ts_objective(jobs: &[Job], sig: &SteeringSignal) -> f64 {
    let dev = TimeShiftable {
        name: "ts".into(),
        jobs: jobs.to_vec(),
    };
    j(plan_timeshiftable(&dev, sig).unwrap().values(), sig, false)
}

pub fn bts_objective(dev: &BufferTimeShiftable, sig: &SteeringSignal) -> (f64, Vec<f64>) {
    let x = plan_buffer_timeshiftable(dev, sig).unwrap().into_values();
    (j(&x, sig, false), x)
}

pub fn battery_objective(b: &Buffer, sig: &SteeringSignal) -> (f64, Vec<f64>) {
    let x = plan_buffer(b, sig).unwrap().into_values();
    (j(&x, sig, true), x)
}

pub fn thermal_objective(t: &ThermalBuffer, sig: &SteeringSignal) -> (f64, Vec<f64>) {
    let x = plan_thermal(t, sig).unwrap().into_values();
    (j(&x, sig, true), x)
}

/// Outcome of one oracle comparison campaign.
#[derive(Debug, Default)]
pub struct OracleTally {
    pub checked: usize,
    pub failures: Vec<String>,
}

/// Runs 100 random tiny instances of each planner against its oracle.
pub fn oracle_campaign(seed: u64) -> [(&'static str, OracleTally); 4] {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut ts = OracleTally::default();
    let mut bts = OracleTally::default();
    let mut bat = OracleTally::default();
    let mut th = OracleTally::default();

    for i in 0..100 {
        let n = rng.random_range(3..=6);
        let sig = random_signal(&mut rng, n);
        let jobs = random_jobs(&mut rng, n);
        let got = ts_objective(&jobs, &sig);
        let want = ts_oracle(&jobs, &sig);
        ts.checked += 1;
        if got > want + 1e-9 * want.abs().max(1.0) {
            ts.failures.push(format!("instance {i}: {got} > {want}"));
        }
    }
    for i in 0..100 {
        let n = rng.random_range(3..=6);
        let sig = random_signal(&mut rng, n);
        let dev = random_vehicle(&mut rng, n);
        let (got, _) = bts_objective(&dev, &sig);
        bts.checked += 1;
        if sig.alpha == 0.0 {
            let want = bts_vertex_oracle(&dev, &sig);
            if got > want + 1e-9 * want.abs().max(1.0) {
                bts.failures.push(format!("instance {i} (greedy): {got} > {want}"));
            }
        } else {
            let want = bts_grid_oracle(&dev, &sig, 9);
            if got > want + 1e-9 * want.abs().max(1.0) {
                bts.failures.push(format!("instance {i}: {got} > {want}"));
            }
        }
    }
    for i in 0..100 {
        let n = rng.random_range(3..=6);
        let sig = random_signal(&mut rng, n);
        let cap = rng.random_range(0.5..4.0);
        let b = Buffer {
            name: "bat".into(),
            capacity_kwh: cap,
            max_power_w: rng.random_range(1000.0..5000.0),
            soc0_kwh: rng.random_range(0.0..1.0) * cap,
        };
        let (got, _) = battery_objective(&b, &sig);
        let want = storage_grid_oracle(
            -b.max_power_w,
            b.max_power_w,
            1e-3,
            cap,
            b.soc0_kwh,
            &vec![0.0; n],
            &sig,
            9,
        )
        .expect("idle is on the grid");
        bat.checked += 1;
        if got > want + 0.02 * want.abs() + 1e-9 {
            bat.failures.push(format!("instance {i}: {got} > {want}"));
        }
    }
    let mut i = 0;
    while th.checked < 100 {
        i += 1;
        let n = rng.random_range(3..=6);
        let sig = random_signal(&mut rng, n);
        let cop = rng.random_range(2.0..4.0);
        let pmax = rng.random_range(1000.0..3000.0);
        let store = rng.random_range(1.0..6.0);
        let step = cop * pmax * 1e-3 * DT_H;
        let drain: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.8) * step).collect();
        let t = ThermalBuffer {
            name: "hp".into(),
            store_kwh_th: store,
            cop,
            max_power_w: pmax,
            soc0_kwh_th: rng.random_range(0.0..1.0) * store,
            heat_demand_kwh_th: drain.clone(),
        };
        let Some(want) = storage_grid_oracle(0.0, pmax, cop * 1e-3, store, t.soc0_kwh_th, &drain, &sig, 9) else {
            continue;
        };
        let (got, _) = thermal_objective(&t, &sig);
        th.checked += 1;
        if got > want + 0.02 * want.abs() + 1e-9 {
            th.failures.push(format!("instance {i}: {got} > {want}"));
        }
    }
    [("time-shiftable", ts), ("buffer-time-shiftable", bts), ("battery", bat), ("thermal", th)]
}

/// Default scenario over the first `days` days of the bundled data.
pub fn sample_scenario(days: u32, seed: u64) -> (feeder_dsm::scenario::Scenario, Vec<f64>, EnergyPrice) {
    let cfg = feeder_dsm::config::ScenarioConfig {
        n_days: days,
        seed,
        ..Default::default()
    };
    let g = cfg.grid().unwrap();
    let w = feeder_dsm::ingest::load_weather(data_dir().join("weather_kumpula_2017.csv"), &g).unwrap();
    let p = feeder_dsm::ingest::load_prices(data_dir().join("prices_fi_2017.csv"), &g).unwrap();
    let sc = feeder_dsm::scenario::build_scenario(&cfg, &w).unwrap();
    (sc, w.ghi_wm2, p)
}
