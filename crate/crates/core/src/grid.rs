//! Radial low-voltage feeder with a constant-voltage load-flow
//! approximation.
//!
//! Segment `i` connects node `i` to node `i + 1`; node 0 is the substation.
//! A house attached at node `k + 1` loads segments `0..=k`, so segment `i`
//! carries the sum of all houses attached at index `≥ i`. Current is
//! `|P| / V` and segment losses are `R · I²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub resistance_ohm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederModel {
    pub segments: Vec<Segment>,
    /// Segment index each house hangs off (house `h` at `attachment[h]`).
    pub attachment: Vec<usize>,
    pub v_nominal_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    /// Power drawn at the substation: house sum plus losses.
    pub substation_w: Vec<f64>,
    pub losses_w: Vec<f64>,
    /// `segment_current_a[i][t]`.
    pub segment_current_a: Vec<Vec<f64>>,
}

impl FlowResult {
    pub fn peak_w(&self) -> f64 {
        self.substation_w.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn losses_kwh(&self, dt_h: f64) -> f64 {
        self.losses_w.iter().sum::<f64>() * dt_h / 1000.0
    }
}

impl FeederModel {
    /// One house per node along a line of identical segments.
    pub fn line(n_houses: usize, resistance_ohm: f64, v_nominal_v: f64) -> Self {
        Self {
            segments: vec![Segment { resistance_ohm }; n_houses.max(1)],
            attachment: (0..n_houses).collect(),
            v_nominal_v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_nominal_v > 0.0) {
            return Err(Error::InvalidArgument("nominal voltage must be positive".into()));
        }
        if self.segments.iter().any(|s| !(s.resistance_ohm > 0.0)) {
            return Err(Error::InvalidArgument("segment resistance must be positive".into()));
        }
        if let Some(a) = self.attachment.iter().find(|a| **a >= self.segments.len()) {
            return Err(Error::InvalidArgument(format!(
                "attachment {a} beyond {} segments",
                self.segments.len()
            )));
        }
        Ok(())
    }
}

/// Default feeder: `n` segments of 0.05 Ω at 230 V, one house per node.
pub fn default_feeder(n_houses: usize) -> FeederModel {
    FeederModel::line(n_houses, 0.05, 230.0)
}

/// Evaluates flows for per-house net power profiles (W, positive import).
pub fn evaluate_feeder(feeder: &FeederModel, houses: &[&[f64]]) -> Result<FlowResult> {
    feeder.validate()?;
    if houses.len() != feeder.attachment.len() {
        return Err(Error::InvalidArgument(format!(
            "{} house profiles for {} attachments",
            houses.len(),
            feeder.attachment.len()
        )));
    }
    let n = houses.first().map_or(0, |h| h.len());
    if houses.iter().any(|h| h.len() != n) {
        return Err(Error::IncompatibleGrid("house profiles differ in length".into()));
    }
    let m = feeder.segments.len();
    // Power injected at each segment's far end, then suffix-summed.
    let mut seg_power = vec![vec![0.0; n]; m];
    for (h, p) in houses.iter().enumerate() {
        let row = &mut seg_power[feeder.attachment[h]];
        for (a, v) in row.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    for i in (0..m.saturating_sub(1)).rev() {
        let (head, tail) = seg_power.split_at_mut(i + 1);
        for (a, v) in head[i].iter_mut().zip(&tail[0]) {
            *a += v;
        }
    }
    let v = feeder.v_nominal_v;
    let mut losses = vec![0.0; n];
    let mut currents = Vec::with_capacity(m);
    for (seg, p) in feeder.segments.iter().zip(&seg_power) {
        let current: Vec<f64> = p.iter().map(|x| x.abs() / v).collect();
        for (l, i) in losses.iter_mut().zip(&current) {
            *l += seg.resistance_ohm * i * i;
        }
        currents.push(current);
    }
    let substation = (0..n)
        .map(|t| houses.iter().map(|h| h[t]).sum::<f64>() + losses[t])
        .collect();
    Ok(FlowResult {
        substation_w: substation,
        losses_w: losses,
        segment_current_a: currents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_segment_line() {
        let f = FeederModel {
            segments: vec![Segment { resistance_ohm: 0.1 }; 2],
            attachment: vec![0, 1],
            v_nominal_v: 230.0,
        };
        let r = evaluate_feeder(&f, &[&[2300.0], &[2300.0]]).unwrap();
        assert!((r.segment_current_a[0][0] - 20.0).abs() < 1e-12);
        assert!((r.losses_w[0] - 50.0).abs() < 1e-9);
        assert!((r.substation_w[0] - 4650.0).abs() < 1e-9);
    }

    #[test]
    fn zero_load_has_no_losses() {
        let r = evaluate_feeder(&default_feeder(3), &[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert_eq!(r.losses_w, vec![0.0, 0.0]);
        assert_eq!(r.peak_w(), 0.0);
    }

    #[test]
    fn bad_attachment() {
        let mut f = default_feeder(2);
        f.attachment[1] = 5;
        assert!(evaluate_feeder(&f, &[&[1.0], &[1.0]]).is_err());
    }
}
