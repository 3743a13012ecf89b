//! Command-line entry point.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::load_scenario_config;
use crate::error::{Error, Result};
use crate::ingest::{load_prices, load_weather};
use crate::report::{
    run_alpha, run_baseline, run_comparison, run_dir_name, write_run, write_summary, Window,
};
use crate::scenario::{build_scenario, read_scenario, write_scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "feeder-dsm", version, about = "Profile steering versus price steering on a residential feeder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AlphaArg {
    Baseline,
    Value(f64),
}

fn parse_alpha(s: &str) -> std::result::Result<AlphaArg, String> {
    if s == "baseline" {
        return Ok(AlphaArg::Baseline);
    }
    let a: f64 = s.parse().map_err(|_| format!("{s:?} is neither a number nor `baseline`"))?;
    if !(0.0..=1.0).contains(&a) {
        return Err(format!("alpha {a} outside [0, 1]"));
    }
    Ok(AlphaArg::Value(a))
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a frozen scenario from a config and weather file.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one configuration on a frozen scenario.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        /// Steering weight in [0, 1], or `baseline` for the uncontrolled run.
        #[arg(long, value_parser = parse_alpha)]
        alpha: AlphaArg,
        #[arg(long)]
        out: PathBuf,
        /// Restrict time-series CSVs to START,END (RFC 3339).
        #[arg(long)]
        window: Option<Window>,
    },
    /// Baseline plus every configured alpha, with a summary table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weather: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict time-series CSVs to START,END (RFC 3339).
        #[arg(long)]
        window: Option<Window>,
    },
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match &e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                e if e.is_data_error() => EXIT_DATA,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            config,
            weather,
            seed,
            out,
        } => {
            let mut cfg = load_scenario_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let grid = cfg.grid()?;
            let w = load_weather(&weather, &grid)?;
            let scenario = build_scenario(&cfg, &w)?;
            write_scenario(&out, &scenario)
        }
        Command::Run {
            scenario,
            prices,
            weather,
            alpha,
            out,
            window,
        } => {
            let sc = read_scenario(&scenario)?;
            let w = load_weather(&weather, &sc.grid)?;
            let p = load_prices(&prices, &sc.grid)?;
            let baseline = run_baseline(&sc, &w.ghi_wm2, &p)?;
            let report = match alpha {
                AlphaArg::Baseline => baseline,
                AlphaArg::Value(a) => run_alpha(&sc, &w.ghi_wm2, &p, a, &baseline.plans)?,
            };
            let dir = out.join(run_dir_name(report.label));
            write_run(&report, &sc, &dir, window)?;
            write_summary(&out.join("summary.csv"), std::slice::from_ref(&report))
        }
        Command::Compare {
            config,
            weather,
            prices,
            out,
            window,
        } => run_comparison(&config, &weather, &prices, &out, window).map(|_| ()),
    }
}
