//! Weather and price CSV ingestion.
//!
//! Both formats are UTF-8 CSV with a fixed header, RFC 3339 UTC timestamps
//! marking the start of each sample interval, strictly increasing and
//! uniformly spaced. Short gaps (at most [`MAX_GAP_SAMPLES`] missing
//! samples) are filled by linear interpolation; the regular source series is
//! then hold-upsampled or mean-downsampled onto the simulation grid.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};

use crate::error::{Error, Result};
use crate::timeseries::{EnergyPrice, TimeGrid};

pub const WEATHER_HEADER: [&str; 3] = ["timestamp", "temperature_c", "ghi_wm2"];
pub const PRICE_HEADER: [&str; 2] = ["timestamp", "price_eur_mwh"];

/// Largest number of consecutive missing source samples that is interpolated.
pub const MAX_GAP_SAMPLES: u64 = 4;

const TEMPERATURE_BAND_C: (f64, f64) = (-60.0, 60.0);

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub grid: TimeGrid,
    pub temperature_c: Vec<f64>,
    pub ghi_wm2: Vec<f64>,
}

/// Regularised source data: `columns[c][i]` is the value at `start + i·step`.
#[derive(Debug)]
struct RawSeries {
    path: PathBuf,
    start: DateTime<Utc>,
    step_s: i64,
    columns: Vec<Vec<f64>>,
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

fn read_csv(path: &Path, header: &[&str]) -> Result<RawSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut records = reader.records();
    let first = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file".into())),
    };
    let got: Vec<&str> = first.iter().map(str::trim).collect();
    if got != header {
        return Err(parse_err(
            1,
            format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
        ));
    }

    let n_cols = header.len() - 1;
    let mut stamps: Vec<(DateTime<Utc>, u64)> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| parse_err(line, format!("bad timestamp `{}`", &rec[0])))?;
        let mut vals = Vec::with_capacity(n_cols);
        for (c, name) in header.iter().enumerate().skip(1) {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("bad {name} `{}`", &rec[c])))?;
            vals.push(v);
        }
        if let Some((prev, _)) = stamps.last() {
            if ts <= *prev {
                return Err(parse_err(line, "timestamps not strictly increasing".into()));
            }
        }
        stamps.push((ts, line));
        rows.push(vals);
    }
    if stamps.len() < 2 {
        return Err(parse_err(1, "need at least two data rows".into()));
    }

    let step_s = (stamps[1].0 - stamps[0].0).num_seconds();
    let mut columns = vec![Vec::with_capacity(rows.len()); n_cols];
    for c in 0..n_cols {
        columns[c].push(rows[0][c]);
    }
    for i in 1..stamps.len() {
        let (ts, line) = stamps[i];
        let diff = (ts - stamps[i - 1].0).num_seconds();
        if diff % step_s != 0 {
            return Err(parse_err(
                line,
                format!("non-uniform spacing: {diff} s is not a multiple of {step_s} s"),
            ));
        }
        let missing = (diff / step_s - 1) as u64;
        if missing > MAX_GAP_SAMPLES {
            return Err(Error::GapTooLarge {
                path: path.to_path_buf(),
                after: stamps[i - 1].0.to_rfc3339_opts(SecondsFormat::Secs, true),
                missing,
            });
        }
        for c in 0..n_cols {
            let a = rows[i - 1][c];
            let b = rows[i][c];
            let span = (missing + 1) as f64;
            for k in 1..=missing {
                columns[c].push(a + (b - a) * k as f64 / span);
            }
            columns[c].push(b);
        }
    }

    Ok(RawSeries {
        path: path.to_path_buf(),
        start: stamps[0].0,
        step_s,
        columns,
    })
}

impl RawSeries {
    fn len(&self) -> usize {
        self.columns[0].len()
    }

    fn coverage_err(&self, detail: String) -> Error {
        Error::Coverage {
            path: self.path.clone(),
            detail,
        }
    }

    /// Projects column `c` onto `grid` by holding (source step a multiple of
    /// the target interval) or by averaging (target interval a multiple of
    /// the source step).
    fn project(&self, c: usize, grid: &TimeGrid) -> Result<Vec<f64>> {
        let target_s = i64::from(grid.interval_s());
        let offset = (grid.start() - self.start).num_seconds();
        let src_end = self.start + chrono::Duration::seconds(self.step_s * self.len() as i64);
        if offset < 0 || grid.end() > src_end {
            return Err(self.coverage_err(format!(
                "source spans {} .. {}, grid spans {} .. {}",
                self.start,
                src_end,
                grid.start(),
                grid.end()
            )));
        }
        let src = &self.columns[c];
        if self.step_s % target_s == 0 {
            if offset % target_s != 0 {
                return Err(self.coverage_err("grid start not aligned to source".into()));
            }
            Ok((0..grid.len())
                .map(|i| {
                    let t = offset + target_s * i as i64;
                    src[(t / self.step_s) as usize]
                })
                .collect())
        } else if target_s % self.step_s == 0 {
            if offset % self.step_s != 0 {
                return Err(self.coverage_err("grid start not aligned to source".into()));
            }
            let per = (target_s / self.step_s) as usize;
            let first = (offset / self.step_s) as usize;
            Ok((0..grid.len())
                .map(|i| {
                    let k = first + i * per;
                    src[k..k + per].iter().sum::<f64>() / per as f64
                })
                .collect())
        } else {
            Err(self.coverage_err(format!(
                "source step {} s and grid interval {} s are not commensurate",
                self.step_s, target_s
            )))
        }
    }
}

pub fn load_weather(path: impl AsRef<Path>, target_grid: &TimeGrid) -> Result<WeatherSeries> {
    let path = path.as_ref();
    let raw = read_csv(path, &WEATHER_HEADER)?;
    let (lo, hi) = TEMPERATURE_BAND_C;
    // Range checks against source samples so the error can name the instant.
    for i in 0..raw.len() {
        let ts = raw.start + chrono::Duration::seconds(raw.step_s * i as i64);
        let t = raw.columns[0][i];
        let g = raw.columns[1][i];
        if !(lo..=hi).contains(&t) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("temperature {t} at {ts} outside [{lo}, {hi}] C"),
            });
        }
        if g < 0.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("negative irradiance {g} at {ts}"),
            });
        }
    }
    Ok(WeatherSeries {
        grid: *target_grid,
        temperature_c: raw.project(0, target_grid)?,
        ghi_wm2: raw.project(1, target_grid)?,
    })
}

/// Loads day-ahead prices in EUR/MWh and converts them to EUR/kWh.
pub fn load_prices(path: impl AsRef<Path>, target_grid: &TimeGrid) -> Result<EnergyPrice> {
    let raw = read_csv(path.as_ref(), &PRICE_HEADER)?;
    let values = raw
        .project(0, target_grid)?
        .into_iter()
        .map(|p| p / 1000.0)
        .collect();
    EnergyPrice::new(*target_grid, values)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn stamp(grid: &TimeGrid, i: usize) -> String {
    grid.timestamp(i).to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Canonical writer: one row per grid interval, shortest round-trip floats.
pub fn write_weather(path: impl AsRef<Path>, weather: &WeatherSeries) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", WEATHER_HEADER.join(",")).map_err(io)?;
    for i in 0..weather.grid.len() {
        writeln!(
            w,
            "{},{},{}",
            stamp(&weather.grid, i),
            weather.temperature_c[i],
            weather.ghi_wm2[i]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Smallest-magnitude EUR/MWh value that converts back to exactly `kwh`.
fn eur_mwh_for(kwh: f64) -> f64 {
    let guess = kwh * 1000.0;
    if guess / 1000.0 == kwh {
        return guess;
    }
    let mut up = guess;
    let mut down = guess;
    for _ in 0..8 {
        up = f64::from_bits(if up >= 0.0 { up.to_bits() + 1 } else { up.to_bits() - 1 });
        down = f64::from_bits(if down > 0.0 { down.to_bits() - 1 } else { down.to_bits() + 1 });
        if up / 1000.0 == kwh {
            return up;
        }
        if down / 1000.0 == kwh {
            return down;
        }
    }
    guess
}

pub fn write_prices(path: impl AsRef<Path>, prices: &EnergyPrice) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", PRICE_HEADER.join(",")).map_err(io)?;
    for (i, p) in prices.values().iter().enumerate() {
        writeln!(w, "{},{}", stamp(prices.grid(), i), eur_mwh_for(*p)).map_err(io)?;
    }
    w.flush().map_err(io)
}
