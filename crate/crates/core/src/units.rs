//! Decibel and power-unit conversions.

use crate::error::{Error, Result};

/// Boltzmann constant, J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380_649e-23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbDirection {
    /// dB → linear power ratio.
    ToLinear,
    /// Linear power ratio → dB.
    ToDb,
}

pub fn convert_db(x: f64, direction: DbDirection) -> Result<f64> {
    match direction {
        DbDirection::ToLinear => Ok(db_to_linear(x)),
        DbDirection::ToDb => linear_to_db(x),
    }
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::Domain(format!(
            "log conversion needs a positive finite ratio, got {ratio}"
        )));
    }
    Ok(10.0 * ratio.log10())
}

#[inline]
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(watts: f64) -> Result<f64> {
    Ok(linear_to_db(watts)? + 30.0)
}
