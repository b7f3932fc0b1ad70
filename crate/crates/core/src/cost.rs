//! Training energy and emissions arithmetic.

use crate::error::{GlamError, Result};

/// Measured system power per TPU-v4 chip, in watts.
pub const TPU_V4_WATTS: f64 = 326.0;

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(GlamError::config(format!("{name} must be a finite nonnegative number, got {v}")));
    }
    Ok(())
}

/// `chips · watts · hours · pue / 1e6`, in MWh.
pub fn energy_estimate(chips: f64, watts_per_chip: f64, hours: f64, pue: f64) -> Result<f64> {
    check_nonnegative("chips", chips)?;
    check_nonnegative("watts_per_chip", watts_per_chip)?;
    check_nonnegative("hours", hours)?;
    check_nonnegative("pue", pue)?;
    if pue < 1.0 {
        return Err(GlamError::config(format!("pue must be at least 1, got {pue}")));
    }
    Ok(chips * watts_per_chip * hours * pue / 1e6)
}

/// Net tCO2e for `mwh` of consumption at a given grid intensity.
pub fn co2_estimate(mwh: f64, tco2e_per_mwh: f64) -> Result<f64> {
    check_nonnegative("mwh", mwh)?;
    check_nonnegative("tco2e_per_mwh", tco2e_per_mwh)?;
    Ok(mwh * tco2e_per_mwh)
}
