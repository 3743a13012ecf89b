//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::time::Instant;

use common::*;
use feeder_dsm::config::ScenarioConfig;
use feeder_dsm::devices::{pv_profile, Device};
use feeder_dsm::grid::{evaluate_feeder, FeederModel, Segment};
use feeder_dsm::ingest::load_weather;
use feeder_dsm::report::{run_alpha, run_baseline, run_comparison, RunReport};
use feeder_dsm::scenario::Scenario;
use feeder_dsm::TimeGrid;

const SEEDS: std::ops::Range<u64> = 42..62;
const DEFAULT_SEED: u64 = 42;

struct Outcome {
    passed: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome, failures: &mut usize) {
    let verdict = if o.passed { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} [{verdict}] {name}: {}", o.detail);
    if !o.passed {
        *failures += 1;
    }
}

struct SeedRuns {
    seed: u64,
    scenario: Scenario,
    baseline: RunReport,
    alpha1: RunReport,
    alpha0: RunReport,
    alpha1_secs: f64,
}

fn seed_runs(seed: u64) -> SeedRuns {
    let (scenario, ghi, prices) = sample_scenario(365, seed);
    let baseline = run_baseline(&scenario, &ghi, &prices).unwrap();
    let t = Instant::now();
    let alpha1 = run_alpha(&scenario, &ghi, &prices, 1.0, &baseline.plans).unwrap();
    let alpha1_secs = t.elapsed().as_secs_f64();
    let alpha0 = run_alpha(&scenario, &ghi, &prices, 0.0, &baseline.plans).unwrap();
    SeedRuns { seed, scenario, baseline, alpha1, alpha0, alpha1_secs }
}

fn monotone(runs: &[SeedRuns]) -> Outcome {
    let mut bad = Vec::new();
    let mut iters = 0;
    let mut slowest: f64 = 0.0;
    for r in runs {
        slowest = slowest.max(r.alpha1_secs);
        for tr in &r.alpha1.traces {
            let mut prev = tr.initial_distance_w;
            for rec in &tr.records {
                iters += 1;
                if rec.improvement_w < 1.0 || rec.distance_w > prev {
                    bad.push(format!("seed {} block {} iter {}", r.seed, tr.block, rec.iter));
                }
                prev = rec.distance_w;
            }
        }
    }
    Outcome {
        passed: bad.is_empty() && slowest < 60.0,
        detail: format!(
            "{iters} accepted iterations over {} seeds, {} violations, slowest alpha=1 year {slowest:.1} s (budget 60 s)",
            runs.len(),
            bad.len()
        ),
    }
}

fn peak_reduction(runs: &[SeedRuns]) -> Outcome {
    let mut ok = 0;
    let mut rel: Vec<f64> = runs
        .iter()
        .map(|r| {
            if r.alpha1.substation_peak_w <= r.baseline.substation_peak_w {
                ok += 1;
            }
            1.0 - r.alpha1.substation_peak_w / r.baseline.substation_peak_w
        })
        .collect();
    rel.sort_by(f64::total_cmp);
    let median = 0.5 * (rel[rel.len() / 2 - 1] + rel[rel.len() / 2]);
    Outcome {
        passed: ok >= 19 && median > 0.0,
        detail: format!("alpha=1 peak <= baseline on {ok}/20 seeds, median reduction {:.1}%", 100.0 * median),
    }
}

fn price_pathology(runs: &[SeedRuns]) -> Outcome {
    let ok = runs
        .iter()
        .filter(|r| {
            r.alpha0.substation_peak_w >= r.baseline.substation_peak_w
                && r.alpha0.total_losses_kwh >= r.alpha1.total_losses_kwh
        })
        .count();
    let mean_ratio = runs.iter().map(|r| r.alpha0.substation_peak_w / r.baseline.substation_peak_w).sum::<f64>() / runs.len() as f64;
    Outcome {
        passed: ok >= 16,
        detail: format!("alpha=0 peak >= baseline and losses >= alpha=1 on {ok}/20 seeds (mean alpha=0/baseline peak {mean_ratio:.2})"),
    }
}

fn loss_ordering(default: &SeedRuns) -> Outcome {
    let (_, ghi, prices) = sample_scenario(365, DEFAULT_SEED);
    let half = run_alpha(&default.scenario, &ghi, &prices, 0.5, &default.baseline.plans).unwrap();
    let (l1, lh, l0) = (default.alpha1.total_losses_kwh, half.total_losses_kwh, default.alpha0.total_losses_kwh);
    let le = |a: f64, b: f64| a <= b * 1.01;
    Outcome {
        passed: le(l1, lh) && le(lh, l0),
        detail: format!("losses alpha=1 {l1:.1} kWh, alpha=0.5 {lh:.1} kWh, alpha=0 {l0:.1} kWh (1% tie tolerance)"),
    }
}

fn planner_optimality() -> Outcome {
    let tallies = oracle_campaign(2024);
    let passed = tallies.iter().all(|(_, t)| t.checked == 100 && t.failures.is_empty());
    let detail = tallies
        .iter()
        .map(|(n, t)| format!("{n} {}/{}", t.checked - t.failures.len(), t.checked))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome { passed, detail: format!("instances within oracle slack: {detail}") }
}

fn conservation_issues(sc: &Scenario, r: &RunReport) -> Vec<String> {
    let mut issues = Vec::new();
    let dt = sc.grid.dt_hours();
    for (h, plan) in sc.households.iter().zip(&r.plans) {
        for (d, x) in h.devices.iter().zip(&plan.devices) {
            match d {
                Device::TimeShiftable(ts) => {
                    for job in &ts.jobs {
                        let want = job.shape_w.iter().sum::<f64>();
                        let got: f64 = x[job.earliest_start..=job.deadline].iter().sum();
                        if (got - want).abs() > 1e-6 * want {
                            // Windows of one appliance never overlap, so each
                            // window holds exactly its own job.
                            issues.push(format!("{} house {} {} job window {}", r.label, h.id, ts.name, job.earliest_start));
                        }
                    }
                    let total: f64 = ts.jobs.iter().map(|j| j.shape_w.iter().sum::<f64>()).sum();
                    if (x.iter().sum::<f64>() - total).abs() > 1e-6 * total.max(1.0) {
                        issues.push(format!("{} house {} {} total", r.label, h.id, ts.name));
                    }
                }
                Device::BufferTimeShiftable(v) => {
                    for s in &v.sessions {
                        let got = x[s.arrival..s.departure].iter().sum::<f64>() * dt / 1000.0;
                        if (got - s.required_kwh).abs() > 1e-6 * s.required_kwh.max(1e-9) {
                            issues.push(format!("{} house {} session at {}", r.label, h.id, s.arrival));
                        }
                    }
                }
                _ => {}
            }
        }
    }
    let c = &r.categories;
    let n = sc.grid.len();
    let energy = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut sub_err: f64 = 0.0;
    let mut cat_err: f64 = 0.0;
    for t in 0..n {
        let houses: f64 = r.house_net_w.iter().map(|h| h[t]).sum();
        sub_err += (r.flow.substation_w[t] - houses - r.flow.losses_w[t]).abs();
        let cats = c.uncontrollable[t] + c.timeshiftable[t] + c.buffer_timeshiftable[t] + c.battery[t] + c.thermal[t] + c.pv[t];
        cat_err += (cats - (r.flow.substation_w[t] - r.flow.losses_w[t])).abs();
    }
    let scale = energy(&r.flow.substation_w).max(1.0);
    if sub_err > 1e-6 * scale {
        issues.push(format!("{} substation accounting off by {sub_err}", r.label));
    }
    if cat_err > 1e-6 * scale {
        issues.push(format!("{} category accounting off by {cat_err}", r.label));
    }
    issues
}

fn conservation(runs: &[SeedRuns]) -> Outcome {
    let mut issues = Vec::new();
    let mut checked = 0;
    for r in runs {
        for rep in [&r.baseline, &r.alpha1, &r.alpha0] {
            checked += 1;
            issues.extend(conservation_issues(&r.scenario, rep));
        }
    }
    Outcome {
        passed: issues.is_empty(),
        detail: format!("{checked} runs checked, {} violations{}", issues.len(), issues.first().map(|s| format!(" (first: {s})")).unwrap_or_default()),
    }
}

fn feeder_arithmetic() -> Outcome {
    let one = FeederModel { segments: vec![Segment { resistance_ohm: 0.1 }], attachment: vec![0], v_nominal_v: 230.0 };
    let a = evaluate_feeder(&one, &[&[4600.0]]).unwrap();
    let two = FeederModel { segments: vec![Segment { resistance_ohm: 0.1 }; 2], attachment: vec![0, 1], v_nominal_v: 230.0 };
    let b = evaluate_feeder(&two, &[&[2300.0], &[2300.0]]).unwrap();
    let exact = a.losses_w[0] == 40.0 && b.losses_w[0] == 50.0 && b.segment_current_a[0][0] == 20.0 && b.segment_current_a[1][0] == 10.0;

    let f = FeederModel::line(10, 0.05, 230.0);
    let houses: Vec<Vec<f64>> = (0..10).map(|h| (0..96).map(|t| 300.0 + 97.0 * ((h * 7 + t * 3) % 23) as f64 - 900.0).collect()).collect();
    let refs: Vec<&[f64]> = houses.iter().map(|v| v.as_slice()).collect();
    let base = evaluate_feeder(&f, &refs).unwrap();
    let mut worst: f64 = 0.0;
    for k in [0.5, 2.0, 3.7, 10.0] {
        let scaled: Vec<Vec<f64>> = houses.iter().map(|v| v.iter().map(|x| x * k).collect()).collect();
        let refs: Vec<&[f64]> = scaled.iter().map(|v| v.as_slice()).collect();
        let s = evaluate_feeder(&f, &refs).unwrap();
        for (l0, l1) in base.losses_w.iter().zip(&s.losses_w) {
            if *l0 > 0.0 {
                worst = worst.max((l1 / (k * k * l0) - 1.0).abs());
            }
        }
    }
    Outcome {
        passed: exact && worst <= 1e-9,
        detail: format!("40 W and 50 W examples exact: {exact}; worst k^2 relative error {worst:.1e}"),
    }
}

fn pv_yield() -> Outcome {
    let cfg = ScenarioConfig::default();
    let g: TimeGrid = cfg.grid().unwrap();
    let w = load_weather(data_dir().join("weather_kumpula_2017.csv"), &g).unwrap();
    let kwh = -pv_profile(&g, 1.0, 0.175, &w.ghi_wm2).unwrap().energy_kwh();
    Outcome {
        passed: (kwh - 220.0).abs() <= 0.15 * 220.0,
        detail: format!("1 m2 at 17.5% yields {kwh:.1} kWh/yr (target 220 +/- 15%)"),
    }
}

fn determinism() -> Outcome {
    let d = data_dir();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for dir in &dirs {
        run_comparison(
            &d.join("default_config.json"),
            &d.join("weather_kumpula_2017.csv"),
            &d.join("prices_fi_2017.csv"),
            dir.path(),
            None,
        )
        .unwrap();
    }
    let mut files = Vec::new();
    let mut stack = vec![dirs[0].path().to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in std::fs::read_dir(&p).unwrap() {
            let e = e.unwrap().path();
            if e.is_dir() {
                stack.push(e);
            } else {
                files.push(e.strip_prefix(dirs[0].path()).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    let differing: Vec<_> = files
        .iter()
        .filter(|f| std::fs::read(dirs[0].path().join(f)).ok() != std::fs::read(dirs[1].path().join(f)).ok())
        .collect();
    Outcome {
        passed: !files.is_empty() && differing.is_empty(),
        detail: format!("{} files compared, {} differ", files.len(), differing.len()),
    }
}

fn ev_dominance(default: &SeedRuns) -> Outcome {
    let b = default.baseline.ev_to_ts_peak_ratio();
    let z = default.alpha0.ev_to_ts_peak_ratio();
    Outcome {
        passed: b >= 3.0 && z >= 3.0,
        detail: format!("ev/time-shiftable peak ratio baseline {b:.2}, alpha=0 {z:.2} (bound 3)"),
    }
}

fn main() {
    let start = Instant::now();
    let runs: Vec<SeedRuns> = SEEDS.map(seed_runs).collect();
    let default = runs.iter().find(|r| r.seed == DEFAULT_SEED).unwrap();
    let mut failures = 0;
    report(1, "monotone steering convergence", &monotone(&runs), &mut failures);
    report(2, "peak reduction under profile steering", &peak_reduction(&runs), &mut failures);
    report(3, "price steering raises peaks and losses", &price_pathology(&runs), &mut failures);
    report(4, "loss ordering across alpha", &loss_ordering(default), &mut failures);
    report(5, "planner optimality against oracles", &planner_optimality(), &mut failures);
    report(6, "energy conservation and accounting", &conservation(&runs), &mut failures);
    report(7, "feeder arithmetic", &feeder_arithmetic(), &mut failures);
    report(8, "PV annual yield", &pv_yield(), &mut failures);
    report(9, "byte-identical comparison outputs", &determinism(), &mut failures);
    report(10, "EV dominance ratio", &ev_dominance(default), &mut failures);
    println!("acceptance: {} of 10 criteria passed in {:.0} s", 10 - failures, start.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
