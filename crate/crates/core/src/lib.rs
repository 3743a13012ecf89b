//! Residential demand-side management on a low-voltage feeder: device
//! planners, a Profile Steering coordinator, a radial feeder model and an
//! experiment harness comparing uncontrolled, price-steered and
//! profile-steered operation.

pub mod cli;
pub mod config;
pub mod devices;
pub mod error;
pub mod grid;
pub mod ingest;
pub mod report;
pub mod scenario;
pub mod steering;
pub mod timeseries;

pub use error::{Error, Result};
pub use timeseries::{EnergyPrice, Profile, TimeGrid};
