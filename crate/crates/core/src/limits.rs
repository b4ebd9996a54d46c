//! Upper limits on excess power and their conversion to a limit on ε.
//!
//! The power limit is the `cl` quantile of a normal distribution truncated
//! below at zero, centred on the mean per-bit excess. The ε limit follows from
//! the leakage power ε²·P_A/4, with the in-band fraction folded into P_A and the
//! readout and Hadamard fidelity corrections applied multiplicatively.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::stats::{mean, sample_std};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Lower-tail standard normal CDF.
fn phi(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// Upper-tail standard normal probability.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CDF of Normal(mu, sigma) truncated below at `lower`.
pub fn truncated_normal_cdf(x: f64, mu: f64, sigma: f64, lower: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    let a = (lower - mu) / sigma;
    let z = (x - mu) / sigma;
    if a > 0.0 {
        1.0 - upper_tail(z) / upper_tail(a)
    } else {
        (phi(z) - phi(a)) / upper_tail(a)
    }
}

/// Percent point function of Normal(mu, sigma) truncated below at `lower`.
///
/// Works with whichever tail keeps the target probability free of
/// cancellation, so heavily truncated cases (lower far above mu) stay accurate.
pub fn truncated_normal_ppf(q: f64, mu: f64, sigma: f64, lower: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile must lie in (0, 1), got {q}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let a = (lower - mu) / sigma;
    let tail_a = upper_tail(a);
    let below = phi(a) + q * tail_a;
    let above = (1.0 - q) * tail_a;
    let mut z = if below < 0.5 {
        -SQRT_2 * erfc_inv(2.0 * below)
    } else {
        SQRT_2 * erfc_inv(2.0 * above)
    };
    // Newton polish on the survival form
    for _ in 0..3 {
        let pdf = std_normal_pdf(z);
        if pdf == 0.0 || !z.is_finite() {
            break;
        }
        let resid = if above < 0.5 {
            upper_tail(z) - above
        } else {
            below - phi(z)
        };
        let step = resid / pdf;
        z += step;
        if step.abs() < 1e-15 * z.abs().max(1.0) {
            break;
        }
    }
    Ok((mu + sigma * z).max(lower))
}

/// Spread entering the truncated normal (limits) or the excess gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Standard error of the mean of per-bit excesses.
    StandardError,
    /// Sample standard deviation of per-bit excesses.
    PerBitSpread,
    /// Standard deviation of the calibrated sideband bins of all spectra.
    PooledBinSpread,
}

/// `cl` upper limit on the mean excess power, using the standard error of
/// the mean as the width of the truncated normal.
pub fn power_upper_limit(excesses: &[f64], cl: f64) -> Result<f64> {
    power_upper_limit_with(excesses, cl, SigmaMode::StandardError)
}

pub fn power_upper_limit_with(excesses: &[f64], cl: f64, mode: SigmaMode) -> Result<f64> {
    if excesses.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: excesses.len(),
        });
    }
    if !(cl > 0.0 && cl < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {cl}")));
    }
    let mu = mean(excesses);
    let sigma = match mode {
        SigmaMode::StandardError => sample_std(excesses) / (excesses.len() as f64).sqrt(),
        SigmaMode::PerBitSpread => sample_std(excesses),
        SigmaMode::PooledBinSpread => {
            return Err(Error::Domain("pooled bin spread needs spectra, not excesses".into()))
        }
    };
    if sigma == 0.0 {
        return Ok(mu.max(0.0));
    }
    truncated_normal_ppf(cl, mu, sigma, 0.0)
}

/// 1/√F_C: fewer valid events when readout misassigns outcomes.
pub fn readout_correction(f_c: f64) -> Result<f64> {
    if !(f_c > 0.0 && f_c <= 1.0) {
        return Err(Error::Domain(format!("readout fidelity must lie in (0, 1], got {f_c}")));
    }
    Ok(1.0 / f_c.sqrt())
}

/// 1/[2·(1/2 − √(1 − F_H))]: the leaking field scales with |α|².
pub fn hadamard_correction(f_h: f64) -> Result<f64> {
    if !(f_h > 0.75 && f_h <= 1.0) {
        return Err(Error::Domain(format!(
            "Hadamard fidelity must lie in (0.75, 1], got {f_h}"
        )));
    }
    Ok(1.0 / (2.0 * (0.5 - (1.0 - f_h).sqrt())))
}

pub fn epsilon_limit(p_m: f64, p_applied: f64, f_bandwidth: f64, f_readout: f64, f_hadamard: f64) -> Result<f64> {
    for (name, v) in [
        ("p_m", p_m),
        ("p_applied", p_applied),
        ("f_bandwidth", f_bandwidth),
        ("f_readout", f_readout),
        ("f_hadamard", f_hadamard),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive, got {v}")));
        }
    }
    if f_bandwidth > 1.0 {
        return Err(Error::Domain(format!("f_bandwidth must be <= 1, got {f_bandwidth}")));
    }
    Ok(2.0 * (p_m / (p_applied * f_bandwidth)).sqrt() * f_readout * f_hadamard)
}

/// True when the quantum mean exceeds the classical mean by strictly more
/// than `k` classical standard deviations.
pub fn compare_quantum_classical(q_mean: f64, c_mean: f64, c_sigma: f64, k: f64) -> Result<bool> {
    if !(c_sigma >= 0.0) {
        return Err(Error::Domain(format!("c_sigma must be >= 0, got {c_sigma}")));
    }
    Ok(q_mean > c_mean + k * c_sigma)
}

pub const DEFAULT_GATE_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Classical,
    Quantum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corrections {
    /// In-band fraction of the line (multiplies P_A).
    pub f_bandwidth: f64,
    /// Readout-fidelity factor on ε.
    pub f_readout: f64,
    /// Hadamard-fidelity factor on ε.
    pub f_hadamard: f64,
}

impl Corrections {
    pub fn from_fidelities(f_bandwidth: f64, f_c: f64, f_h: f64) -> Result<Self> {
        Ok(Self {
            f_bandwidth,
            f_readout: readout_correction(f_c)?,
            f_hadamard: hadamard_correction(f_h)?,
        })
    }

    pub fn none() -> Self {
        Self {
            f_bandwidth: 1.0,
            f_readout: 1.0,
            f_hadamard: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub p_m: f64,
    pub cl: f64,
    pub corrections: Corrections,
    pub p_applied: f64,
    pub epsilon_limit: f64,
    pub excess_detected: bool,
    pub dataset_tag: DatasetTag,
    pub n_bits: usize,
    pub limit_sigma: SigmaMode,
}

impl LimitReport {
    pub fn build(
        excesses: &[f64],
        cl: f64,
        p_applied: f64,
        corrections: Corrections,
        dataset_tag: DatasetTag,
        excess_detected: bool,
    ) -> Result<Self> {
        let p_m = power_upper_limit(excesses, cl)?;
        let epsilon_limit = epsilon_limit(
            p_m,
            p_applied,
            corrections.f_bandwidth,
            corrections.f_readout,
            corrections.f_hadamard,
        )?;
        Ok(Self {
            p_m,
            cl,
            corrections,
            p_applied,
            epsilon_limit,
            excess_detected,
            dataset_tag,
            n_bits: excesses.len(),
            limit_sigma: SigmaMode::StandardError,
        })
    }
}
