//! Amplifier-chain calibration.
//!
//! The HEMT gain comes from a generator tone measured through the chain; the
//! noise temperature then follows from the amplified thermal noise,
//! `P = k_B · b · (T_dewar + T_noise) · G / IL`. The post-HEMT loss enters both
//! the solve and the data calibration and cancels between them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{KeyValueWriter, KeyValues};
use crate::rfchain::{ChainConfig, ReferencePlane, Spectrum};
use crate::units::{db_to_linear, dbm_to_watts, linear_to_db, BOLTZMANN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    OneSidedConservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyApplication {
    IncreasePm,
    DecreasePa,
    DecreaseGain,
}

/// Systematic-error treatment for a calibration input. The error is taken as
/// fully systematic and applied in whichever direction weakens the limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPolicy {
    pub relative_error: f64,
    pub sidedness: Sidedness,
    pub application: PolicyApplication,
}

impl ErrorPolicy {
    pub fn cable(application: PolicyApplication) -> Self {
        Self {
            relative_error: 0.10,
            sidedness: Sidedness::OneSidedConservative,
            application,
        }
    }

    pub fn hp_gain() -> Self {
        Self {
            relative_error: 0.0,
            sidedness: Sidedness::OneSidedConservative,
            application: PolicyApplication::DecreaseGain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CableDirection {
    TowardPm,
    TowardPa,
}

/// Gain actually used for P_A: nominal minus the full one-sided error.
pub fn effective_hp_gain(nominal_db: f64, sigma_db: f64, policy: &ErrorPolicy) -> Result<f64> {
    if !(sigma_db >= 0.0) {
        return Err(Error::Precondition(format!("sigma_db must be >= 0, got {sigma_db}")));
    }
    match policy.sidedness {
        Sidedness::OneSidedConservative => Ok(nominal_db - sigma_db),
    }
}

/// Linear loss factor (>= 1) after inflating `loss_db` by the policy's
/// relative error. A larger loss raises powers inferred upstream of the cable
/// (toward P_M) and lowers powers delivered through it (toward P_A); either
/// way the conservative shift is an increase of the loss.
pub fn apply_cable_policy(loss_db: f64, policy: &ErrorPolicy, direction: CableDirection) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::Precondition(format!("loss_db must be >= 0, got {loss_db}")));
    }
    if !(policy.relative_error >= 0.0) {
        return Err(Error::Precondition("relative_error must be >= 0".into()));
    }
    let shifted = match (policy.sidedness, direction) {
        (Sidedness::OneSidedConservative, CableDirection::TowardPm | CableDirection::TowardPa) => {
            loss_db * (1.0 + policy.relative_error)
        }
    };
    Ok(db_to_linear(shifted))
}

/// Amplified thermal noise reading with the source off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalMeasurement {
    pub power_sa_w: f64,
    pub rbw_hz: f64,
    pub t_dewar_k: f64,
}

/// Generator tone reading through the HEMT, HP amplifier bypassed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMeasurement {
    pub p_generator_dbm: f64,
    pub il_pre_hemt_db: f64,
    pub power_sa_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSolution {
    pub g_hemt_db: f64,
    pub t_hemt_noise_k: f64,
    /// The post-HEMT loss assumed during the solve; data must be calibrated with
    /// the same value.
    pub il_post_hemt_db: f64,
    pub effective_g_hp_db: Option<f64>,
    /// Path name → linear loss factor after the error policy.
    pub effective_il_factors: BTreeMap<String, f64>,
}

impl CalibrationSolution {
    /// Linear power ratio SA input / HEMT input.
    pub fn sa_per_hemt(&self) -> f64 {
        db_to_linear(self.g_hemt_db) / db_to_linear(self.il_post_hemt_db)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::new();
        w.comment("HEMT calibration")
            .put("g_hemt_db", self.g_hemt_db)
            .put("t_hemt_noise_k", self.t_hemt_noise_k)
            .put("il_post_hemt_db", self.il_post_hemt_db);
        if let Some(g) = self.effective_g_hp_db {
            w.put("effective_g_hp_db", g);
        }
        for (path, f) in &self.effective_il_factors {
            w.put(&format!("il_factor.{path}"), f);
        }
        w.finish()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut effective_il_factors = BTreeMap::new();
        for key in kv.keys() {
            if let Some(path) = key.strip_prefix("il_factor.") {
                effective_il_factors.insert(path.to_string(), kv.require(key)?);
            }
        }
        Ok(Self {
            g_hemt_db: kv.require("g_hemt_db")?,
            t_hemt_noise_k: kv.require("t_hemt_noise_k")?,
            il_post_hemt_db: kv.require("il_post_hemt_db")?,
            effective_g_hp_db: kv.get("effective_g_hp_db")?,
            effective_il_factors,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::read(path)?)
    }

    /// Calibration matching `cfg` exactly, as if solved from noiseless readings.
    pub fn from_config(cfg: &ChainConfig) -> Self {
        Self {
            g_hemt_db: cfg.g_hemt_db,
            t_hemt_noise_k: cfg.t_hemt_noise_k,
            il_post_hemt_db: cfg.il_post_hemt_db,
            effective_g_hp_db: None,
            effective_il_factors: BTreeMap::new(),
        }
    }
}

/// Generator tone must clear the thermal reading by this factor for noise to
/// be negligible in the gain solve.
pub const MIN_GENERATOR_SNR: f64 = 10.0;

pub fn solve_hemt_calibration(
    thermal: &ThermalMeasurement,
    gen: &GeneratorMeasurement,
    il_post_hemt_db: f64,
) -> Result<CalibrationSolution> {
    if !(thermal.power_sa_w > 0.0 && thermal.rbw_hz > 0.0 && thermal.t_dewar_k > 0.0) {
        return Err(Error::Precondition("thermal measurement must be positive".into()));
    }
    if !(gen.power_sa_w >= MIN_GENERATOR_SNR * thermal.power_sa_w) {
        return Err(Error::Precondition(format!(
            "generator reading {:.3e} W is below {MIN_GENERATOR_SNR}x the thermal reading {:.3e} W",
            gen.power_sa_w, thermal.power_sa_w
        )));
    }
    let il_post = db_to_linear(il_post_hemt_db);
    let p_in = dbm_to_watts(gen.p_generator_dbm - gen.il_pre_hemt_db);
    let gain = gen.power_sa_w * il_post / p_in;
    let t_total = thermal.power_sa_w * il_post / (BOLTZMANN * thermal.rbw_hz * gain);
    let t_noise = t_total - thermal.t_dewar_k;
    if t_noise < -1e-6 {
        return Err(Error::Precondition(format!(
            "thermal reading implies negative noise temperature {t_noise:.4} K"
        )));
    }
    Ok(CalibrationSolution {
        g_hemt_db: linear_to_db(gain)?,
        t_hemt_noise_k: t_noise,
        il_post_hemt_db,
        effective_g_hp_db: None,
        effective_il_factors: BTreeMap::new(),
    })
}

/// Readings the chain in `cfg` would produce; the inverse of the solver.
pub fn forward_measurements(cfg: &ChainConfig, rbw_hz: f64) -> (ThermalMeasurement, GeneratorMeasurement) {
    let g = cfg.hemt_to_sa();
    let thermal = ThermalMeasurement {
        power_sa_w: BOLTZMANN * rbw_hz * (cfg.t_dewar_k + cfg.t_hemt_noise_k) * g,
        rbw_hz,
        t_dewar_k: cfg.t_dewar_k,
    };
    let gen = GeneratorMeasurement {
        p_generator_dbm: cfg.p_generator_dbm,
        il_pre_hemt_db: cfg.il_pre_hemt_db,
        power_sa_w: dbm_to_watts(cfg.p_generator_dbm - cfg.il_pre_hemt_db) * g,
    };
    (thermal, gen)
}

/// Which losses get the conservative cable policy, and how the HP gain error
/// is treated. Every adjusted path is recorded in the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPlan {
    pub cable: ErrorPolicy,
    /// Shrink the generator → HEMT loss before solving (lowers G, raises P_M).
    pub adjust_pre_hemt: bool,
    /// Inflate the HP amplifier → load loss (lowers P_A).
    pub adjust_hp_path: bool,
    pub hp_gain: ErrorPolicy,
}

impl Default for PolicyPlan {
    fn default() -> Self {
        Self {
            cable: ErrorPolicy::cable(PolicyApplication::IncreasePm),
            adjust_pre_hemt: false,
            adjust_hp_path: true,
            hp_gain: ErrorPolicy::hp_gain(),
        }
    }
}

/// Solves the HEMT calibration under `plan` and records the policy-adjusted
/// HP gain and path losses.
pub fn calibrate_with_policies(
    cfg: &ChainConfig,
    thermal: &ThermalMeasurement,
    gen: &GeneratorMeasurement,
    plan: &PolicyPlan,
) -> Result<CalibrationSolution> {
    let mut gen = *gen;
    let mut factors = BTreeMap::new();
    if plan.adjust_pre_hemt {
        // Upstream of the gain measurement the conservative shift is a
        // smaller loss: more power reaches the HEMT, the solved gain drops and
        // calibrated powers rise.
        let db = gen.il_pre_hemt_db * (1.0 - plan.cable.relative_error);
        gen.il_pre_hemt_db = db;
        factors.insert("pre_hemt".to_string(), db_to_linear(db));
    }
    let mut sol = solve_hemt_calibration(thermal, &gen, cfg.il_post_hemt_db)?;
    if plan.adjust_hp_path {
        let pa_policy = ErrorPolicy {
            application: PolicyApplication::DecreasePa,
            ..plan.cable
        };
        factors.insert(
            "hp_path".to_string(),
            apply_cable_policy(cfg.il_hp_path_db, &pa_policy, CableDirection::TowardPa)?,
        );
    }
    sol.effective_g_hp_db = Some(effective_hp_gain(cfg.g_hp_amp_db, cfg.g_hp_amp_sigma_db, &plan.hp_gain)?);
    sol.effective_il_factors = factors;
    Ok(sol)
}

/// Power delivered through the HP amplifier and the HP path for a given drive.
pub fn applied_power_w(drive_dbm: f64, g_hp_db: f64, il_hp_factor: f64) -> f64 {
    dbm_to_watts(drive_dbm + g_hp_db) / il_hp_factor
}

/// Refers a raw SA-plane spectrum to the HEMT input.
pub fn calibrate_spectrum(raw: &Spectrum, sol: &CalibrationSolution) -> Result<Spectrum> {
    if raw.reference_plane != ReferencePlane::SaInput {
        return Err(Error::PlaneMismatch {
            expected: ReferencePlane::SaInput.as_str(),
            found: raw.reference_plane.as_str(),
        });
    }
    Ok(raw.referred_to(ReferencePlane::HemtInput, sol.sa_per_hemt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rfchain::synthesize_spectrum;
    use crate::stats::mean;
    use crate::units::watts_to_dbm;
    use proptest::prelude::*;

    fn reference_fixture() -> (ThermalMeasurement, GeneratorMeasurement) {
        (
            ThermalMeasurement {
                power_sa_w: dbm_to_watts(-154.6),
                rbw_hz: 1.0,
                t_dewar_k: 1.921,
            },
            GeneratorMeasurement {
                p_generator_dbm: -130.0,
                il_pre_hemt_db: 7.53,
                power_sa_w: dbm_to_watts(-101.33),
            },
        )
    }

    #[test]
    fn hp_gain_policy() {
        let p = ErrorPolicy::hp_gain();
        assert!((effective_hp_gain(60.73, 0.6, &p).unwrap() - 60.13).abs() < 1e-12);
        assert_eq!(effective_hp_gain(47.0, 0.0, &p).unwrap(), 47.0);
        assert_eq!(effective_hp_gain(40.0, 1.0, &p).unwrap(), 39.0);
        assert!(effective_hp_gain(40.0, -1.0, &p).is_err());
    }

    #[test]
    fn cable_policy() {
        let p = ErrorPolicy::cable(PolicyApplication::IncreasePm);
        let f = apply_cable_policy(1.89, &p, CableDirection::TowardPm).unwrap();
        assert!((f / db_to_linear(2.079) - 1.0).abs() < 1e-12);
        assert_eq!(apply_cable_policy(0.0, &p, CableDirection::TowardPa).unwrap(), 1.0);
        let f = apply_cable_policy(7.10, &p, CableDirection::TowardPa).unwrap();
        assert!((f / db_to_linear(7.81) - 1.0).abs() < 1e-12);
        assert!(apply_cable_policy(-0.1, &p, CableDirection::TowardPa).is_err());
    }

    #[test]
    fn forward_fixture_reads_minus_101_33_dbm() {
        let (_, gen) = forward_measurements(&ChainConfig::default(), 1.0);
        let dbm = watts_to_dbm(gen.power_sa_w).unwrap();
        assert!((dbm + 101.33).abs() < 0.005, "{dbm}");
    }

    #[test]
    fn reference_calibration_reproduced() {
        let (thermal, gen) = reference_fixture();
        let sol = solve_hemt_calibration(&thermal, &gen, 1.89).unwrap();
        assert!((sol.g_hemt_db - 38.087).abs() < 0.02, "{}", sol.g_hemt_db);
        assert!((sol.t_hemt_noise_k - 4.108).abs() < 0.05, "{}", sol.t_hemt_noise_k);
    }

    #[test]
    fn zero_noise_temperature() {
        let cfg = ChainConfig {
            t_hemt_noise_k: 0.0,
            ..ChainConfig::default()
        };
        let (thermal, gen) = forward_measurements(&cfg, 1.0);
        let sol = solve_hemt_calibration(&thermal, &gen, cfg.il_post_hemt_db).unwrap();
        assert!(sol.t_hemt_noise_k.abs() < 1e-6);
    }

    #[test]
    fn weak_generator_rejected() {
        let (thermal, mut gen) = reference_fixture();
        gen.power_sa_w = 5.0 * thermal.power_sa_w;
        assert!(matches!(
            solve_hemt_calibration(&thermal, &gen, 1.89),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn calibrated_noise_level() {
        let cfg = ChainConfig {
            span_hz: 100.0,
            ..ChainConfig::default()
        };
        let raw = synthesize_spectrum(&cfg, 0, 0.0, 1).unwrap().spectrum;
        let cal = calibrate_spectrum(&raw, &CalibrationSolution::from_config(&cfg)).unwrap();
        assert_eq!(cal.reference_plane, ReferencePlane::HemtInput);
        assert!((mean(&cal.bins) / 8.32e-26 - 1.0).abs() < 0.01);
        assert!(matches!(
            calibrate_spectrum(&cal, &CalibrationSolution::from_config(&cfg)),
            Err(Error::PlaneMismatch { .. })
        ));
    }

    #[test]
    fn unity_chain_is_identity() {
        let cfg = ChainConfig {
            g_hemt_db: 0.0,
            il_post_hemt_db: 0.0,
            ..ChainConfig::default()
        };
        let raw = synthesize_spectrum(&cfg, 0, 0.0, 2).unwrap().spectrum;
        let cal = calibrate_spectrum(&raw, &CalibrationSolution::from_config(&cfg)).unwrap();
        assert_eq!(cal.bins, raw.bins);
    }

    #[test]
    fn post_hemt_loss_cancels() {
        let (thermal, gen) = reference_fixture();
        let raw = synthesize_spectrum(&ChainConfig::default(), 0, 1e-12, 6).unwrap().spectrum;
        let reference =
            calibrate_spectrum(&raw, &solve_hemt_calibration(&thermal, &gen, 1.89).unwrap()).unwrap();
        let other =
            calibrate_spectrum(&raw, &solve_hemt_calibration(&thermal, &gen, 5.00).unwrap()).unwrap();
        for (a, b) in reference.bins.iter().zip(&other.bins) {
            assert!((a / b - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn policies_recorded_and_kv_round_trip() {
        let cfg = ChainConfig::default();
        let (thermal, gen) = reference_fixture();
        let plan = PolicyPlan {
            adjust_pre_hemt: true,
            ..PolicyPlan::default()
        };
        let sol = calibrate_with_policies(&cfg, &thermal, &gen, &plan).unwrap();
        assert!((sol.effective_g_hp_db.unwrap() - 60.13).abs() < 1e-12);
        assert!(sol.effective_il_factors.contains_key("pre_hemt"));
        assert!(sol.effective_il_factors.contains_key("hp_path"));
        // inflated pre-HEMT loss lowers the solved gain by exactly the extra loss
        assert!((sol.g_hemt_db - (38.09 - 0.753)).abs() < 0.02, "{}", sol.g_hemt_db);
        let back = CalibrationSolution::from_kv(&KeyValues::parse(&sol.to_kv(), "cal").unwrap()).unwrap();
        assert_eq!(back.effective_il_factors.len(), 2);
        assert!((back.g_hemt_db - sol.g_hemt_db).abs() < 1e-12);
    }

    #[test]
    fn hp_policy_lowers_applied_power() {
        let nominal = applied_power_w(-15.0, 60.73, db_to_linear(7.10));
        let p = ErrorPolicy::cable(PolicyApplication::DecreasePa);
        let adjusted = applied_power_w(
            -15.0,
            effective_hp_gain(60.73, 0.6, &ErrorPolicy::hp_gain()).unwrap(),
            apply_cable_policy(7.10, &p, CableDirection::TowardPa).unwrap(),
        );
        assert!(adjusted < nominal);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn solver_round_trip(g in 20.0f64..50.0, t in 1.0f64..10.0, il in 0.0f64..6.0, td in 0.5f64..4.0) {
            let cfg = ChainConfig {
                g_hemt_db: g,
                t_hemt_noise_k: t,
                il_post_hemt_db: il,
                t_dewar_k: td,
                ..ChainConfig::default()
            };
            let (thermal, gen) = forward_measurements(&cfg, 1.0);
            let sol = solve_hemt_calibration(&thermal, &gen, il).unwrap();
            prop_assert!((db_to_linear(sol.g_hemt_db) / db_to_linear(g) - 1.0).abs() < 1e-9);
            prop_assert!((sol.t_hemt_noise_k / t - 1.0).abs() < 1e-9);
        }
    }
}
