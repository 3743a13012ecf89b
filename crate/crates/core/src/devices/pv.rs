use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{Profile, TimeGrid};

/// Rooftop PV array. Never steered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvPanel {
    pub name: String,
    pub area_m2: f64,
    pub efficiency: f64,
}

impl PvPanel {
    pub fn profile(&self, grid: &TimeGrid, ghi_wm2: &[f64]) -> Result<Profile> {
        pv_profile(grid, self.area_m2, self.efficiency, ghi_wm2)
    }
}

/// Generation `−area · efficiency · ghi` in W (negative: generation).
pub fn pv_profile(grid: &TimeGrid, area_m2: f64, efficiency: f64, ghi_wm2: &[f64]) -> Result<Profile> {
    if !(area_m2 > 0.0 && area_m2.is_finite()) {
        return Err(Error::InvalidArgument(format!("pv area {area_m2} must be positive")));
    }
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::InvalidArgument(format!("pv efficiency {efficiency} outside (0, 1]")));
    }
    let values = ghi_wm2.iter().map(|g| -area_m2 * efficiency * g).collect();
    Profile::new(*grid, values)
}
