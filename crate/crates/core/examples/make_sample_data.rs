//! Writes the bundled synthetic sample data into `data/`:
//! hourly 2017 weather for a site at 60.2° N and hourly day-ahead prices
//! with a Nordic-style daily and seasonal shape.
//!
//! Usage: cargo run --example make_sample_data -- [OUT_DIR]

use std::f64::consts::PI;
use std::path::PathBuf;

use chrono::{Datelike, TimeZone, Timelike, Utc};
use feeder_dsm::ingest::{write_prices, write_weather, WeatherSeries};
use feeder_dsm::{EnergyPrice, TimeGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const LAT_DEG: f64 = 60.2;
const LON_DEG: f64 = 24.96;
/// Annual global horizontal irradiation the GHI series is scaled to (kWh/m²).
const ANNUAL_GHI_KWH_M2: f64 = 1257.0;
const MEAN_PRICE_EUR_MWH: f64 = 33.2;

fn solar_elevation_sin(doy: f64, utc_hour: f64) -> f64 {
    let decl = 23.44_f64.to_radians() * (2.0 * PI * (284.0 + doy) / 365.0).sin();
    let solar_time = utc_hour + LON_DEG / 15.0;
    let hour_angle = (15.0 * (solar_time - 12.0)).to_radians();
    let lat = LAT_DEG.to_radians();
    lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(&out)?;
    let start = Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap();
    let grid = TimeGrid::days(start, 3600, 365)?;
    let n = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(2017);
    let unit = Normal::new(0.0, 1.0)?;

    // Daily clearness index as an AR(1) process, hourly temperature noise.
    let mut clearness: f64 = 0.5;
    let mut temp_noise: f64 = 0.0;
    let mut ghi = vec![0.0; n];
    let mut temp = vec![0.0; n];
    for t in 0..n {
        let ts = grid.timestamp(t);
        let doy = f64::from(ts.ordinal());
        let hour = f64::from(ts.hour()) + 0.5;
        if ts.hour() == 0 {
            clearness = (0.55 + 0.6 * (clearness - 0.55) + 0.18 * unit.sample(&mut rng)).clamp(0.1, 0.95);
        }
        let s = solar_elevation_sin(doy, hour);
        ghi[t] = if s > 0.0 { 1100.0 * clearness * s.powf(1.15) } else { 0.0 };

        temp_noise = 0.97 * temp_noise + 0.6 * unit.sample(&mut rng);
        let seasonal = 5.6 - 11.5 * (2.0 * PI * (doy - 25.0) / 365.0).cos();
        let diurnal_amp = 1.5 + 2.5 * (s.max(0.0));
        let diurnal = diurnal_amp * (2.0 * PI * (hour - 2.0 - 15.0) / 24.0).cos();
        temp[t] = (seasonal + diurnal + temp_noise).clamp(-35.0, 33.0);
    }
    let scale = ANNUAL_GHI_KWH_M2 * 1000.0 / ghi.iter().sum::<f64>();
    for g in &mut ghi {
        *g = (*g * scale * 10.0).round() / 10.0;
    }
    for x in &mut temp {
        *x = (*x * 10.0).round() / 10.0;
    }
    write_weather(
        out.join("weather_kumpula_2017.csv"),
        &WeatherSeries {
            grid,
            temperature_c: temp.clone(),
            ghi_wm2: ghi,
        },
    )?;

    // Local (UTC+2) hour-of-day price shape: cheap nights, morning and
    // evening peaks, slightly dearer winters and cheaper weekends.
    let shape = [
        -9.0, -10.0, -10.5, -10.5, -9.5, -6.0, 1.0, 7.0, 9.0, 7.0, 5.0, 4.0, 3.0, 2.5, 2.0, 2.0, 3.5,
        6.0, 7.5, 6.5, 3.5, 0.5, -3.0, -6.0,
    ];
    let mut noise: f64 = 0.0;
    let mut eur_mwh = vec![0.0; n];
    for t in 0..n {
        let local = grid.timestamp(t) + chrono::Duration::hours(2);
        let doy = f64::from(local.ordinal());
        noise = 0.9 * noise + 1.2 * unit.sample(&mut rng);
        let weekend = local.weekday().number_from_monday() >= 6;
        let seasonal = 4.0 * (2.0 * PI * (doy - 15.0) / 365.0).cos();
        let cold = (-temp[t]).max(0.0) * 0.25;
        let p = MEAN_PRICE_EUR_MWH + seasonal + cold + shape[local.hour() as usize] * if weekend { 0.6 } else { 1.0 }
            - if weekend { 3.0 } else { 0.0 }
            + noise;
        eur_mwh[t] = p.max(1.0);
    }
    let mean = eur_mwh.iter().sum::<f64>() / n as f64;
    let prices: Vec<f64> = eur_mwh
        .iter()
        .map(|p| ((p + MEAN_PRICE_EUR_MWH - mean).max(1.0) * 100.0).round() / 100.0 / 1000.0)
        .collect();
    write_prices(out.join("prices_fi_2017.csv"), &EnergyPrice::new(grid, prices)?)?;
    std::fs::write(out.join("default_config.json"), "{}\n")?;
    Ok(())
}
