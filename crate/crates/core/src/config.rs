//! Experiment configuration.
//!
//! The config file is JSON. Every key is optional; missing keys take the
//! defaults below and unknown keys are rejected so that typos in an
//! experiment definition fail loudly. An empty object `{}` is the default
//! ten-house experiment.

use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::TruncGauss;
use crate::timeseries::TimeGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_houses: usize,
    pub start: DateTime<Utc>,
    pub n_days: u32,
    pub interval_s: u32,
    /// Offset of local standard time from UTC; behavioural templates and
    /// planning blocks are laid out in local time.
    pub utc_offset_h: i32,
    pub penetration_pv: f64,
    pub penetration_battery: f64,
    pub penetration_heatpump: f64,
    /// Share of houses owning a vehicle.
    pub vehicle_penetration: f64,
    /// Share of vehicles that are full EVs; the rest are plug-in hybrids.
    pub vehicle_split_ev: f64,
    /// Shares of single, couple and family households.
    pub occupancy_shares: [f64; 3],
    pub devices: DeviceParams,
    pub feeder: FeederParams,
    pub steering: SteeringParams,
    pub alphas: Vec<f64>,
    pub export_price_multiplier: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_houses: 10,
            start: Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap(),
            n_days: 365,
            interval_s: 900,
            utc_offset_h: 2,
            penetration_pv: 0.5,
            penetration_battery: 0.5,
            penetration_heatpump: 0.5,
            vehicle_penetration: 1.0,
            vehicle_split_ev: 0.5,
            occupancy_shares: [0.3, 0.4, 0.3],
            devices: DeviceParams::default(),
            feeder: FeederParams::default(),
            steering: SteeringParams::default(),
            alphas: vec![1.0, 0.5, 0.0],
            export_price_multiplier: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub annual_kwh_single: TruncGauss,
    pub annual_kwh_couple: TruncGauss,
    pub annual_kwh_family: TruncGauss,
    /// Relative standard deviation of the multiplicative base-load jitter.
    pub base_load_jitter: f64,
    pub ev: VehicleParams,
    pub phev: VehicleParams,
    pub pv: PvParams,
    pub battery: BatteryParams,
    pub heat_pump: HeatPumpParams,
    pub dishwasher: ApplianceParams,
    pub washing_machine: ApplianceParams,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            annual_kwh_single: TruncGauss::two_sigma(2000.0, 400.0),
            annual_kwh_couple: TruncGauss::two_sigma(3500.0, 700.0),
            annual_kwh_family: TruncGauss::two_sigma(5000.0, 1000.0),
            base_load_jitter: 0.15,
            ev: VehicleParams {
                capacity_wh: 42_000.0,
                power_w: 7_400.0,
                energy_kwh: TruncGauss::new(10.0, 3.0, 4.0, 42.0 * 0.9),
                arrival_h: TruncGauss::two_sigma(17.5, 1.0),
                departure_h: TruncGauss::two_sigma(8.0, 0.5),
            },
            phev: VehicleParams {
                capacity_wh: 12_000.0,
                power_w: 3_700.0,
                energy_kwh: TruncGauss::new(6.0, 2.0, 2.0, 10.8),
                arrival_h: TruncGauss::two_sigma(17.5, 1.0),
                departure_h: TruncGauss::two_sigma(8.0, 0.5),
            },
            pv: PvParams::default(),
            battery: BatteryParams::default(),
            heat_pump: HeatPumpParams::default(),
            dishwasher: ApplianceParams {
                jobs_per_week: 7.0,
                // 2 h programme, 1.0 kWh
                shape_w: vec![600.0, 600.0, 400.0, 400.0, 400.0, 400.0, 600.0, 600.0],
                shape_step_s: 900,
                earliest_start_h: TruncGauss::two_sigma(20.0, 1.0),
                window_h: (8.0, 12.0),
            },
            washing_machine: ApplianceParams {
                jobs_per_week: 4.0,
                // 1.5 h programme, 0.8 kWh
                shape_w: vec![800.0, 800.0, 400.0, 400.0, 400.0, 400.0],
                shape_step_s: 900,
                earliest_start_h: TruncGauss::two_sigma(17.0, 2.0),
                window_h: (8.0, 12.0),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    pub capacity_wh: f64,
    pub power_w: f64,
    pub energy_kwh: TruncGauss,
    /// Local clock hour of arrival.
    pub arrival_h: TruncGauss,
    /// Local clock hour of departure on the following morning.
    pub departure_h: TruncGauss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PvParams {
    pub area_m2: TruncGauss,
    pub efficiency_min: f64,
    pub efficiency_max: f64,
}

impl Default for PvParams {
    fn default() -> Self {
        Self {
            area_m2: TruncGauss::new(15.0, 4.0, 8.0, 25.0),
            efficiency_min: 0.15,
            efficiency_max: 0.20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryParams {
    pub capacity_min_wh: f64,
    pub capacity_max_wh: f64,
    pub power_w: f64,
    /// Initial state of charge as a fraction of capacity.
    pub initial_soc: f64,
}

impl Default for BatteryParams {
    fn default() -> Self {
        Self {
            capacity_min_wh: 2_000.0,
            capacity_max_wh: 12_000.0,
            power_w: 3_700.0,
            initial_soc: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatPumpParams {
    pub cop: f64,
    /// Minimum electrical rating; raised per house when needed to cover the
    /// coldest interval.
    pub max_power_w: f64,
    pub store_kwh_th: f64,
    pub initial_fill: f64,
    /// Heating threshold temperature.
    pub base_temp_c: f64,
    /// Annual heat demand for single, couple and family houses.
    pub annual_heat_kwh: [f64; 3],
}

impl Default for HeatPumpParams {
    fn default() -> Self {
        Self {
            cop: 3.0,
            max_power_w: 3_000.0,
            store_kwh_th: 12.0,
            initial_fill: 0.5,
            base_temp_c: 17.0,
            annual_heat_kwh: [6_000.0, 8_000.0, 10_000.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceParams {
    pub jobs_per_week: f64,
    /// Programme power shape, one value per `shape_step_s`.
    pub shape_w: Vec<f64>,
    pub shape_step_s: u32,
    pub earliest_start_h: TruncGauss,
    /// Range from which the start window length is drawn uniformly.
    pub window_h: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeederParams {
    pub segment_resistance_ohm: f64,
    pub v_nominal_v: f64,
}

impl Default for FeederParams {
    fn default() -> Self {
        Self {
            segment_resistance_ohm: 0.05,
            v_nominal_v: 230.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviationSplit {
    /// Each candidate absorbs the whole aggregate deviation.
    Full,
    /// Each candidate absorbs a 1/N share.
    Equal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringParams {
    pub block_hours: u32,
    /// Local clock hour at which planning blocks start.
    pub block_start_h: u32,
    pub epsilon_w: f64,
    pub max_iters: usize,
    pub deviation_split: DeviationSplit,
}

impl Default for SteeringParams {
    fn default() -> Self {
        Self {
            block_hours: 24,
            block_start_h: 12,
            epsilon_w: 1.0,
            max_iters: 100,
            deviation_split: DeviationSplit::Full,
        }
    }
}

fn fraction(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be positive")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_houses == 0 {
            return Err(Error::Config("n_houses must be at least 1".into()));
        }
        if self.n_days == 0 {
            return Err(Error::Config("n_days must be at least 1".into()));
        }
        if self.interval_s == 0 || 3600 % self.interval_s != 0 {
            return Err(Error::Config(format!(
                "interval_s = {} must divide one hour",
                self.interval_s
            )));
        }
        fraction("penetration_pv", self.penetration_pv)?;
        fraction("penetration_battery", self.penetration_battery)?;
        fraction("penetration_heatpump", self.penetration_heatpump)?;
        fraction("vehicle_penetration", self.vehicle_penetration)?;
        fraction("vehicle_split_ev", self.vehicle_split_ev)?;
        for (i, s) in self.occupancy_shares.iter().enumerate() {
            fraction(&format!("occupancy_shares[{i}]"), *s)?;
        }
        if (self.occupancy_shares.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("occupancy_shares must sum to 1".into()));
        }
        for a in &self.alphas {
            fraction("alphas[]", *a)?;
        }
        if self.export_price_multiplier < 0.0 || !self.export_price_multiplier.is_finite() {
            return Err(Error::Config("export_price_multiplier must be >= 0".into()));
        }

        let d = &self.devices;
        for (name, g) in [
            ("annual_kwh_single", &d.annual_kwh_single),
            ("annual_kwh_couple", &d.annual_kwh_couple),
            ("annual_kwh_family", &d.annual_kwh_family),
            ("pv.area_m2", &d.pv.area_m2),
        ] {
            g.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if g.lo <= 0.0 {
                return Err(Error::Config(format!("{name}: lower bound must be positive")));
            }
        }
        if !(0.0..1.0).contains(&d.base_load_jitter) {
            return Err(Error::Config("base_load_jitter must be in [0, 1)".into()));
        }
        for (name, v) in [("ev", &d.ev), ("phev", &d.phev)] {
            positive(&format!("{name}.capacity_wh"), v.capacity_wh)?;
            positive(&format!("{name}.power_w"), v.power_w)?;
            for g in [&v.energy_kwh, &v.arrival_h, &v.departure_h] {
                g.validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
            }
            if v.energy_kwh.hi * 1000.0 > v.capacity_wh || v.energy_kwh.lo <= 0.0 {
                return Err(Error::Config(format!(
                    "{name}.energy_kwh must lie in (0, capacity]"
                )));
            }
            if v.arrival_h.lo < 12.0 || v.arrival_h.hi >= 24.0 {
                return Err(Error::Config(format!("{name}.arrival_h must lie in [12, 24)")));
            }
            if v.departure_h.lo < 0.0 || v.departure_h.hi > 12.0 {
                return Err(Error::Config(format!("{name}.departure_h must lie in [0, 12]")));
            }
        }
        if !(0.0 < d.pv.efficiency_min && d.pv.efficiency_min <= d.pv.efficiency_max
            && d.pv.efficiency_max <= 1.0)
        {
            return Err(Error::Config("pv efficiency range invalid".into()));
        }
        let b = &d.battery;
        positive("battery.capacity_min_wh", b.capacity_min_wh)?;
        positive("battery.power_w", b.power_w)?;
        if b.capacity_max_wh < b.capacity_min_wh {
            return Err(Error::Config("battery capacity range invalid".into()));
        }
        fraction("battery.initial_soc", b.initial_soc)?;
        let h = &d.heat_pump;
        positive("heat_pump.cop", h.cop)?;
        positive("heat_pump.max_power_w", h.max_power_w)?;
        positive("heat_pump.store_kwh_th", h.store_kwh_th)?;
        fraction("heat_pump.initial_fill", h.initial_fill)?;
        for v in h.annual_heat_kwh {
            if v < 0.0 {
                return Err(Error::Config("heat_pump.annual_heat_kwh must be >= 0".into()));
            }
        }
        for (name, a) in [("dishwasher", &d.dishwasher), ("washing_machine", &d.washing_machine)] {
            if !(0.0..=7.0).contains(&a.jobs_per_week) {
                return Err(Error::Config(format!("{name}.jobs_per_week must be in [0, 7]")));
            }
            if a.shape_w.is_empty() || a.shape_w.iter().any(|w| *w < 0.0 || !w.is_finite()) {
                return Err(Error::Config(format!("{name}.shape_w must be non-empty and >= 0")));
            }
            if a.shape_step_s == 0 {
                return Err(Error::Config(format!("{name}.shape_step_s must be positive")));
            }
            a.earliest_start_h
                .validate()
                .map_err(|e| Error::Config(format!("{name}: {e}")))?;
            if !(a.window_h.0 > 0.0 && a.window_h.0 <= a.window_h.1) {
                return Err(Error::Config(format!("{name}.window_h invalid")));
            }
        }
        positive("feeder.segment_resistance_ohm", self.feeder.segment_resistance_ohm)?;
        positive("feeder.v_nominal_v", self.feeder.v_nominal_v)?;
        let s = &self.steering;
        if s.block_hours == 0 || s.block_start_h >= 24 {
            return Err(Error::Config("steering block settings invalid".into()));
        }
        positive("steering.epsilon_w", s.epsilon_w)?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::days(self.start, self.interval_s, self.n_days)
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn load_scenario_config(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg = ScenarioConfig::from_json_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: format!("column {}: {e}", e.column()),
    })?;
    cfg.validate()
        .map_err(|e| e.context(path.display().to_string()))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, text).unwrap();
        load_scenario_config(&p)
    }

    #[test]
    fn empty_object_gives_defaults() {
        let c = parse("{}").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.n_houses, 10);
        assert_eq!(c.penetration_pv, 0.5);
        assert_eq!(c.devices.ev.capacity_wh, 42_000.0);
        assert_eq!(c.devices.ev.power_w, 7_400.0);
        assert_eq!(c.devices.phev.capacity_wh, 12_000.0);
        assert_eq!(c.devices.phev.power_w, 3_700.0);
        assert_eq!(c.devices.battery.capacity_min_wh, 2_000.0);
        assert_eq!(c.devices.battery.capacity_max_wh, 12_000.0);
        assert_eq!(c.devices.battery.power_w, 3_700.0);
        assert_eq!((c.devices.pv.efficiency_min, c.devices.pv.efficiency_max), (0.15, 0.20));
    }

    #[test]
    fn partial_override() {
        let c = parse(r#"{"n_houses": 3}"#).unwrap();
        assert_eq!(c.n_houses, 3);
        assert_eq!(c.penetration_battery, 0.5);
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        let err = parse(r#"{"penetration_pv": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("penetration_pv"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        match parse("{\n  \"n_hosues\": 3\n}").unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("n_hosues"));
            }
            e => panic!("unexpected {e}"),
        }
        assert!(parse(r#"{"devices": {"ev": {"capacity": 1}}}"#).is_err());
    }

    #[test]
    fn appliance_shapes_match_nominal_energy() {
        let d = DeviceParams::default();
        let kwh = |a: &ApplianceParams| a.shape_w.iter().sum::<f64>() * 0.25 / 1000.0;
        assert!((kwh(&d.dishwasher) - 1.0).abs() < 1e-12);
        assert!((kwh(&d.washing_machine) - 0.8).abs() < 1e-12);
    }
}
