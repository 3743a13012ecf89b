use serde::{Deserialize, Serialize};

use super::{SignalView, SteeringSignal};
use crate::error::{Error, Result};
use crate::timeseries::Profile;

/// Above this many start combinations a cluster of overlapping jobs is
/// placed by coordinate descent instead of enumeration.
const ENUMERATION_LIMIT: usize = 20_000;
const MAX_DESCENT_ROUNDS: usize = 100;

/// One run of an appliance programme. `deadline` is the last interval in
/// which the programme may still be running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub shape_w: Vec<f64>,
    pub earliest_start: usize,
    pub deadline: usize,
}

impl Job {
    pub fn latest_start(&self) -> Option<usize> {
        (self.deadline + 1).checked_sub(self.shape_w.len())
    }

    pub fn energy_kwh(&self, dt_h: f64) -> f64 {
        self.shape_w.iter().sum::<f64>() * dt_h / 1000.0
    }

    fn n_starts(&self) -> usize {
        self.latest_start().map_or(0, |l| l + 1 - self.earliest_start)
    }
}

/// Appliance with a fixed consumption shape and a flexible start time
/// (washing machine, dishwasher).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeShiftable {
    pub name: String,
    pub jobs: Vec<Job>,
}

pub fn plan_timeshiftable(dev: &TimeShiftable, sig: &SteeringSignal) -> Result<Profile> {
    let mut out = vec![0.0; sig.desired.len()];
    plan_timeshiftable_into(&dev.jobs, sig.view(), &mut out)?;
    Ok(Profile::from_parts_unchecked(*sig.desired.grid(), out))
}

fn validate(jobs: &[Job], n: usize) -> Result<()> {
    for (j, job) in jobs.iter().enumerate() {
        if job.shape_w.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!("job {j}: shape must be non-negative")));
        }
        let ok = matches!(job.latest_start(), Some(l) if l >= job.earliest_start)
            && job.deadline < n;
        if !ok {
            return Err(Error::Infeasible(format!(
                "job {j}: {} intervals do not fit in window [{}, {}] of a {n}-interval horizon",
                job.shape_w.len(),
                job.earliest_start,
                job.deadline
            )));
        }
    }
    Ok(())
}

/// Writes the optimal placement of all jobs into `out`.
///
/// Jobs whose windows do not overlap are independent and are each placed at
/// their exact argmin. Overlapping jobs are placed jointly.
pub(crate) fn plan_timeshiftable_into(jobs: &[Job], sig: SignalView<'_>, out: &mut [f64]) -> Result<()> {
    let n = sig.len();
    validate(jobs, n)?;
    out.fill(0.0);

    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by_key(|&j| (jobs[j].earliest_start, j));
    let weights: Vec<f64> = (0..n).map(|t| sig.price_weight(t)).collect();

    let mut i = 0;
    while i < order.len() {
        let mut end = jobs[order[i]].deadline;
        let mut k = i + 1;
        while k < order.len() && jobs[order[k]].earliest_start <= end {
            end = end.max(jobs[order[k]].deadline);
            k += 1;
        }
        let cluster: Vec<&Job> = order[i..k].iter().map(|&j| &jobs[j]).collect();
        let starts = if cluster.len() == 1 {
            vec![best_start(cluster[0], out, sig, &weights)]
        } else {
            let combos = cluster
                .iter()
                .try_fold(1usize, |acc, j| acc.checked_mul(j.n_starts()))
                .unwrap_or(usize::MAX);
            if combos <= ENUMERATION_LIMIT {
                enumerate_cluster(&cluster, sig, &weights)
            } else {
                descend_cluster(&cluster, out, sig, &weights)
            }
        };
        for (job, s) in cluster.iter().zip(starts) {
            place(out, job, s, 1.0);
        }
        i = k;
    }
    Ok(())
}

fn place(out: &mut [f64], job: &Job, start: usize, sign: f64) {
    for (i, w) in job.shape_w.iter().enumerate() {
        out[start + i] += sign * w;
    }
}

/// Argmin start for one job given the load `others` already placed;
/// earliest start wins ties.
fn best_start(job: &Job, others: &[f64], sig: SignalView<'_>, weights: &[f64]) -> usize {
    let latest = job.latest_start().expect("validated");
    let mut best = (f64::INFINITY, job.earliest_start);
    for k in job.earliest_start..=latest {
        let mut j = 0.0;
        for (i, s) in job.shape_w.iter().enumerate() {
            let t = k + i;
            j += sig.alpha * s * (s + 2.0 * (others[t] - sig.desired[t])) + weights[t] * s;
        }
        if j < best.0 {
            best = (j, k);
        }
    }
    best.1
}

fn enumerate_cluster(cluster: &[&Job], sig: SignalView<'_>, weights: &[f64]) -> Vec<usize> {
    let lo = cluster.iter().map(|j| j.earliest_start).min().unwrap();
    let hi = cluster.iter().map(|j| j.deadline).max().unwrap();
    let mut span = vec![0.0; hi + 1 - lo];
    let mut starts: Vec<usize> = cluster.iter().map(|j| j.earliest_start).collect();
    let mut best = (f64::INFINITY, starts.clone());
    loop {
        span.fill(0.0);
        for (job, &s) in cluster.iter().zip(&starts) {
            for (i, w) in job.shape_w.iter().enumerate() {
                span[s + i - lo] += w;
            }
        }
        let j: f64 = span
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let t = lo + i;
                let e = x - sig.desired[t];
                sig.alpha * (e * e) + weights[t] * x
            })
            .sum();
        if j < best.0 {
            best = (j, starts.clone());
        }
        // odometer, last job fastest
        let mut c = cluster.len();
        loop {
            if c == 0 {
                return best.1;
            }
            c -= 1;
            if starts[c] < cluster[c].latest_start().unwrap() {
                starts[c] += 1;
                break;
            }
            starts[c] = cluster[c].earliest_start;
        }
    }
}

fn descend_cluster(cluster: &[&Job], base: &[f64], sig: SignalView<'_>, weights: &[f64]) -> Vec<usize> {
    let mut load = base.to_vec();
    let mut starts = Vec::with_capacity(cluster.len());
    for job in cluster {
        let s = best_start(job, &load, sig, weights);
        place(&mut load, job, s, 1.0);
        starts.push(s);
    }
    for _ in 0..MAX_DESCENT_ROUNDS {
        let mut changed = false;
        for (c, job) in cluster.iter().enumerate() {
            place(&mut load, job, starts[c], -1.0);
            let s = best_start(job, &load, sig, weights);
            place(&mut load, job, s, 1.0);
            if s != starts[c] {
                starts[c] = s;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{objective, SteeringSignal};
    use crate::timeseries::{EnergyPrice, TimeGrid};
    use chrono::{TimeZone, Utc};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap(), 900, n).unwrap()
    }

    fn signal(d: &[f64], p: &[f64], alpha: f64) -> SteeringSignal {
        let g = grid(d.len());
        SteeringSignal::new(
            Profile::new(g, d.to_vec()).unwrap(),
            EnergyPrice::new(g, p.to_vec()).unwrap(),
            alpha,
        )
        .unwrap()
    }

    fn dev(jobs: Vec<Job>) -> TimeShiftable {
        TimeShiftable {
            name: "ts".into(),
            jobs,
        }
    }

    #[test]
    fn price_only_picks_cheapest_slot() {
        let d = dev(vec![Job {
            shape_w: vec![1000.0],
            earliest_start: 0,
            deadline: 2,
        }]);
        let plan = plan_timeshiftable(&d, &signal(&[0.0; 3], &[0.05, 0.01, 0.05], 0.0)).unwrap();
        assert_eq!(plan.values(), &[0.0, 1000.0, 0.0]);
    }

    #[test]
    fn control_only_matches_desired_placement() {
        let shape = vec![300.0, 700.0];
        let d = dev(vec![Job {
            shape_w: shape.clone(),
            earliest_start: 0,
            deadline: 5,
        }]);
        let desired = [0.0, 0.0, 0.0, 300.0, 700.0, 0.0];
        let plan = plan_timeshiftable(&d, &signal(&desired, &[0.1; 6], 1.0)).unwrap();
        assert_eq!(plan.values(), &desired);
    }

    #[test]
    fn ties_go_to_earliest_start() {
        let d = dev(vec![Job {
            shape_w: vec![100.0],
            earliest_start: 1,
            deadline: 3,
        }]);
        let plan = plan_timeshiftable(&d, &signal(&[0.0; 4], &[0.2; 4], 0.0)).unwrap();
        assert_eq!(plan.values(), &[0.0, 100.0, 0.0, 0.0]);
    }

    #[test]
    fn two_jobs_match_exhaustive_enumeration() {
        // Three starts per job, windows overlap on the middle intervals.
        let jobs = vec![
            Job { shape_w: vec![500.0, 200.0], earliest_start: 0, deadline: 3 },
            Job { shape_w: vec![400.0], earliest_start: 2, deadline: 4 },
        ];
        let desired = [100.0, 600.0, 300.0, 0.0, 450.0];
        let prices = [0.3, 0.1, 0.2, 0.05, 0.4];
        let sig = signal(&desired, &prices, 0.5);
        let plan = plan_timeshiftable(&dev(jobs.clone()), &sig).unwrap();
        let got = objective(&plan, &sig).total;

        let mut best = f64::INFINITY;
        for a in 0..3 {
            for b in 2..5 {
                let mut x = vec![0.0; 5];
                x[a] += 500.0;
                x[a + 1] += 200.0;
                x[b] += 400.0;
                let p = Profile::new(grid(5), x).unwrap();
                best = best.min(objective(&p, &sig).total);
            }
        }
        assert!((got - best).abs() <= 1e-9 * best.abs().max(1.0), "{got} vs {best}");
    }

    #[test]
    fn infeasible_window_names_job() {
        let d = dev(vec![
            Job { shape_w: vec![1.0], earliest_start: 0, deadline: 0 },
            Job { shape_w: vec![1.0, 1.0, 1.0], earliest_start: 1, deadline: 2 },
        ]);
        let err = plan_timeshiftable(&d, &signal(&[0.0; 4], &[0.0; 4], 1.0)).unwrap_err();
        assert!(err.to_string().contains("job 1"), "{err}");
    }

    #[test]
    fn large_overlapping_cluster_uses_descent() {
        let jobs: Vec<Job> = (0..4)
            .map(|_| Job { shape_w: vec![100.0; 4], earliest_start: 0, deadline: 40 })
            .collect();
        let sig = signal(&[100.0; 48], &[0.1; 48], 1.0);
        let plan = plan_timeshiftable(&dev(jobs), &sig).unwrap();
        // four 4-interval blocks of 100 W can tile the flat target exactly
        assert_eq!(plan.values().iter().filter(|v| **v == 100.0).count(), 16);
        assert!(plan.values().iter().all(|v| *v <= 100.0));
    }
}
