//! RF chain model and spectrum synthesis.
//!
//! Spectra are unaveraged: every 1 mHz bin is an independent exponential draw
//! (chi-square with two degrees of freedom up to scale) whose mean is the
//! amplified thermal noise floor. NLQM leakage, when present, is a
//! deterministic line at the source frequency.

use std::fmt;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{KeyValueWriter, KeyValues};
use crate::rng::stream_rng;
use crate::units::{db_to_linear, dbm_to_watts, watts_to_dbm, BOLTZMANN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub t_dewar_k: f64,
    pub t_hemt_noise_k: f64,
    pub g_hemt_db: f64,
    pub g_hp_amp_db: f64,
    pub g_hp_amp_sigma_db: f64,
    /// Signal generator → HEMT input.
    pub il_pre_hemt_db: f64,
    /// HP amplifier output → HP load.
    pub il_hp_path_db: f64,
    /// HEMT output → SA input.
    pub il_post_hemt_db: f64,
    pub rbw_data_hz: f64,
    pub rbw_cal_hz: f64,
    pub f0_hz: f64,
    pub span_hz: f64,
    /// Width of the window around f0 that holds the out-of-bin part of the line.
    pub skirt_hz: f64,
    pub p_generator_dbm: f64,
    pub p_applied_w: f64,
    pub inband_fraction: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            t_dewar_k: 1.921,
            t_hemt_noise_k: 4.108,
            g_hemt_db: 38.087,
            g_hp_amp_db: 60.73,
            g_hp_amp_sigma_db: 0.6,
            il_pre_hemt_db: 7.53,
            il_hp_path_db: 7.10,
            il_post_hemt_db: 1.89,
            rbw_data_hz: 1e-3,
            rbw_cal_hz: 1.0,
            f0_hz: 2.5e9,
            span_hz: 1.0,
            skirt_hz: 1.0,
            p_generator_dbm: -130.0,
            p_applied_w: 7.45,
            inband_fraction: 0.856,
        }
    }
}

/// (key, getter, setter) for the plain-text config format.
type Field = (&'static str, fn(&ChainConfig) -> f64, fn(&mut ChainConfig, f64));

const FIELDS: &[Field] = &[
    ("t_dewar_k", |c| c.t_dewar_k, |c, v| c.t_dewar_k = v),
    ("t_hemt_noise_k", |c| c.t_hemt_noise_k, |c, v| c.t_hemt_noise_k = v),
    ("g_hemt_db", |c| c.g_hemt_db, |c, v| c.g_hemt_db = v),
    ("g_hp_amp_db", |c| c.g_hp_amp_db, |c, v| c.g_hp_amp_db = v),
    ("g_hp_amp_sigma_db", |c| c.g_hp_amp_sigma_db, |c, v| c.g_hp_amp_sigma_db = v),
    ("il_pre_hemt_db", |c| c.il_pre_hemt_db, |c, v| c.il_pre_hemt_db = v),
    ("il_hp_path_db", |c| c.il_hp_path_db, |c, v| c.il_hp_path_db = v),
    ("il_post_hemt_db", |c| c.il_post_hemt_db, |c, v| c.il_post_hemt_db = v),
    ("rbw_data_hz", |c| c.rbw_data_hz, |c, v| c.rbw_data_hz = v),
    ("rbw_cal_hz", |c| c.rbw_cal_hz, |c, v| c.rbw_cal_hz = v),
    ("f0_hz", |c| c.f0_hz, |c, v| c.f0_hz = v),
    ("span_hz", |c| c.span_hz, |c, v| c.span_hz = v),
    ("skirt_hz", |c| c.skirt_hz, |c, v| c.skirt_hz = v),
    ("p_generator_dbm", |c| c.p_generator_dbm, |c, v| c.p_generator_dbm = v),
    ("p_applied_w", |c| c.p_applied_w, |c, v| c.p_applied_w = v),
    ("inband_fraction", |c| c.inband_fraction, |c, v| c.inband_fraction = v),
];

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.t_dewar_k > 0.0) || !(self.t_hemt_noise_k >= 0.0) {
            return bad("temperatures must be positive".into());
        }
        for (name, v) in [
            ("il_pre_hemt_db", self.il_pre_hemt_db),
            ("il_hp_path_db", self.il_hp_path_db),
            ("il_post_hemt_db", self.il_post_hemt_db),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0 dB, got {v}"));
            }
        }
        if !(self.rbw_data_hz > 0.0) || self.rbw_data_hz > self.rbw_cal_hz {
            return bad("need 0 < rbw_data_hz <= rbw_cal_hz".into());
        }
        let n = self.span_hz / self.rbw_data_hz;
        if !(n >= 1.0) || (n - n.round()).abs() > 1e-6 * n {
            return bad(format!("span_hz / rbw_data_hz = {n} is not a whole bin count"));
        }
        if !(self.skirt_hz > 0.0) {
            return bad("skirt_hz must be positive".into());
        }
        if !(self.inband_fraction > 0.0 && self.inband_fraction <= 1.0) {
            return bad(format!("inband_fraction must lie in (0, 1], got {}", self.inband_fraction));
        }
        if !(self.p_applied_w > 0.0) {
            return bad("p_applied_w must be positive".into());
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.span_hz / self.rbw_data_hz).round() as usize
    }

    pub fn center_bin(&self) -> usize {
        self.n_bins() / 2
    }

    /// Start of the frequency axis; chosen so f0 sits at the centre of bin
    /// `center_bin()`, away from bin edges.
    pub fn f_start_hz(&self) -> f64 {
        self.f0_hz - (self.center_bin() as f64 + 0.5) * self.rbw_data_hz
    }

    pub fn g_hemt_lin(&self) -> f64 {
        db_to_linear(self.g_hemt_db)
    }

    pub fn il_post_lin(&self) -> f64 {
        db_to_linear(self.il_post_hemt_db)
    }

    /// Power ratio SA input / HEMT input.
    pub fn hemt_to_sa(&self) -> f64 {
        self.g_hemt_lin() / self.il_post_lin()
    }

    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::new();
        w.comment("RF chain configuration");
        for (key, get, _) in FIELDS {
            w.put(key, get(self));
        }
        w.finish()
    }

    /// Unknown keys are ignored so run configs can carry other sections;
    /// missing keys keep their defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, _, set) in FIELDS {
            if let Some(v) = kv.get::<f64>(key)? {
                set(&mut cfg, v);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePlane {
    SaInput,
    HemtInput,
}

impl ReferencePlane {
    pub fn as_str(self) -> &'static str {
        match self {
            ReferencePlane::SaInput => "sa_input",
            ReferencePlane::HemtInput => "hemt_input",
        }
    }
}

impl fmt::Display for ReferencePlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReferencePlane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sa_input" => Ok(ReferencePlane::SaInput),
            "hemt_input" => Ok(ReferencePlane::HemtInput),
            other => Err(Error::Domain(format!("unknown reference plane {other:?}"))),
        }
    }
}

/// Thermal noise power spectral density, W/Hz.
pub fn noise_floor_psd(cfg: &ChainConfig, plane: ReferencePlane) -> f64 {
    let at_input = BOLTZMANN * (cfg.t_dewar_k + cfg.t_hemt_noise_k);
    match plane {
        ReferencePlane::HemtInput => at_input,
        ReferencePlane::SaInput => at_input * cfg.hemt_to_sa(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sw1Port {
    Port1Load,
    PortSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sw2Port {
    Port1Signal,
    Port2HpLoad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchState {
    pub sw1_port: Sw1Port,
    pub sw2_port: Sw2Port,
    pub source_on: bool,
}

pub fn switch_state_for(bit: u8) -> Result<SwitchState> {
    match bit {
        // HEMT input terminated; readout path isolated from the source.
        0 => Ok(SwitchState {
            sw1_port: Sw1Port::Port1Load,
            sw2_port: Sw2Port::Port1Signal,
            source_on: false,
        }),
        // Source power dumped into the HP load.
        1 => Ok(SwitchState {
            sw1_port: Sw1Port::PortSignal,
            sw2_port: Sw2Port::Port2HpLoad,
            source_on: true,
        }),
        other => Err(Error::Domain(format!("bit must be 0 or 1, got {other}"))),
    }
}

/// Per-bin power spectrum. Bin `i` covers `[f_start + i·bin, f_start + (i+1)·bin)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub f_start_hz: f64,
    pub bin_hz: f64,
    pub rbw_hz: f64,
    pub reference_plane: ReferencePlane,
    pub bins: Vec<f64>,
}

pub type RawSpectrum = Spectrum;
pub type CalibratedSpectrum = Spectrum;

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin_center_hz(&self, i: usize) -> f64 {
        self.f_start_hz + (i as f64 + 0.5) * self.bin_hz
    }

    pub fn bin_index(&self, f_hz: f64) -> Result<usize> {
        let pos = ((f_hz - self.f_start_hz) / self.bin_hz).floor();
        if pos < 0.0 || pos >= self.bins.len() as f64 || !pos.is_finite() {
            return Err(Error::Range(format!(
                "{f_hz} Hz outside spectrum [{}, {})",
                self.f_start_hz,
                self.f_start_hz + self.bins.len() as f64 * self.bin_hz
            )));
        }
        Ok(pos as usize)
    }

    pub fn total_power(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Rescale to another reference plane; `sa_per_hemt` is the linear power
    /// ratio SA input / HEMT input.
    pub fn referred_to(&self, target: ReferencePlane, sa_per_hemt: f64) -> Spectrum {
        let factor = match (self.reference_plane, target) {
            (a, b) if a == b => 1.0,
            (ReferencePlane::SaInput, ReferencePlane::HemtInput) => 1.0 / sa_per_hemt,
            _ => sa_per_hemt,
        };
        Spectrum {
            bins: self.bins.iter().map(|p| p * factor).collect(),
            reference_plane: target,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedSpectrum {
    pub spectrum: RawSpectrum,
    pub switch_state: SwitchState,
    pub seed: u64,
    /// Set when epsilon > 1, outside the perturbative regime.
    pub non_perturbative: bool,
}

/// NLQM leakage power ε²·P_A/4 at the HEMT input.
pub fn leakage_power(epsilon: f64, p_applied_w: f64) -> f64 {
    epsilon * epsilon * p_applied_w / 4.0
}

/// Epsilon whose leakage puts `k_sigma` single-bin noise standard deviations
/// into the f0 bin.
pub fn epsilon_for_center_excess(cfg: &ChainConfig, k_sigma: f64) -> f64 {
    let sigma_bin = noise_floor_psd(cfg, ReferencePlane::HemtInput) * cfg.rbw_data_hz;
    let p_leak = k_sigma * sigma_bin / cfg.inband_fraction;
    2.0 * (p_leak / cfg.p_applied_w).sqrt()
}

/// Adds a line of total power `power` (same plane as the spectrum): the
/// in-band fraction lands in the f0 bin, the rest is spread evenly over the
/// skirt window around it.
pub fn inject_line(spec: &mut Spectrum, cfg: &ChainConfig, power: f64) -> Result<()> {
    let n = spec.len();
    let center = spec.bin_index(cfg.f0_hz)?;
    let skirt = ((cfg.skirt_hz / spec.bin_hz).round() as usize).clamp(1, n);
    let start = center.saturating_sub(skirt / 2).min(n - skirt);
    let spread = (1.0 - cfg.inband_fraction) * power / skirt as f64;
    for p in &mut spec.bins[start..start + skirt] {
        *p += spread;
    }
    spec.bins[center] += cfg.inband_fraction * power;
    Ok(())
}

pub fn synthesize_spectrum(cfg: &ChainConfig, bit: u8, epsilon: f64, seed: u64) -> Result<SynthesizedSpectrum> {
    cfg.validate()?;
    let switch_state = switch_state_for(bit)?;
    if !(epsilon >= 0.0) {
        return Err(Error::Domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = cfg.n_bins();
    let mean = noise_floor_psd(cfg, ReferencePlane::SaInput) * cfg.rbw_data_hz;
    let mut rng = stream_rng(seed, 0);
    let bins: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            // Exp1 can return exactly 0 with negligible probability.
            mean * e.max(f64::MIN_POSITIVE)
        })
        .collect();
    let mut spectrum = Spectrum {
        f_start_hz: cfg.f_start_hz(),
        bin_hz: cfg.rbw_data_hz,
        rbw_hz: cfg.rbw_data_hz,
        reference_plane: ReferencePlane::SaInput,
        bins,
    };
    if bit == 0 && epsilon > 0.0 {
        let p_sa = leakage_power(epsilon, cfg.p_applied_w) * cfg.hemt_to_sa();
        inject_line(&mut spectrum, cfg, p_sa)?;
    }
    Ok(SynthesizedSpectrum {
        spectrum,
        switch_state,
        seed,
        non_perturbative: epsilon > 1.0,
    })
}

/// Peak power in any `narrow_bw` window divided by the total power in the
/// `wide_bw` window centred on that peak.
pub fn measure_inband_fraction(spec: &Spectrum, narrow_bw: f64, wide_bw: f64) -> Result<f64> {
    let n = spec.len();
    let span = n as f64 * spec.bin_hz;
    if !(narrow_bw > 0.0 && narrow_bw <= wide_bw && wide_bw <= span * (1.0 + 1e-9)) {
        return Err(Error::Precondition(format!(
            "need 0 < narrow ({narrow_bw}) <= wide ({wide_bw}) <= span ({span})"
        )));
    }
    let k = ((narrow_bw / spec.bin_hz).round() as usize).clamp(1, n);
    let w = ((wide_bw / spec.bin_hz).round() as usize).clamp(k, n);

    let mut window: f64 = spec.bins[..k].iter().sum();
    let (mut best, mut best_start) = (window, 0usize);
    for s in 1..=n - k {
        window += spec.bins[s + k - 1] - spec.bins[s - 1];
        if window > best {
            best = window;
            best_start = s;
        }
    }
    // recompute to avoid accumulated rounding from the sliding sum
    let peak: f64 = spec.bins[best_start..best_start + k].iter().sum();

    // significance against the bins outside the wide window's core
    let guard = 10.max(k);
    let side: Vec<f64> = spec
        .bins
        .iter()
        .enumerate()
        .filter(|(i, _)| *i + guard < best_start || *i >= best_start + k + guard)
        .map(|(_, &p)| p)
        .collect();
    if side.len() >= 2 {
        let m = crate::stats::mean(&side);
        let s = crate::stats::sample_std(&side);
        let peak_bin = spec.bins[best_start..best_start + k]
            .iter()
            .copied()
            .fold(f64::MIN, f64::max);
        if !(peak_bin - m > 0.0 && peak_bin - m >= 5.0 * s) {
            return Err(Error::NoSignal(format!(
                "peak exceeds sideband mean by {:.2} sigma",
                (peak_bin - m) / s
            )));
        }
    }

    let start = (best_start + k / 2).saturating_sub(w / 2).min(n - w);
    let total: f64 = spec.bins[start..start + w].iter().sum();
    Ok(peak / total)
}

/// `frequency_hz,power_dbm` rows plus the key=value sidecar.
pub fn spectrum_csv(spec: &Spectrum) -> Result<String> {
    let mut out = String::with_capacity(spec.len() * 40 + 32);
    out.push_str("frequency_hz,power_dbm\n");
    for (i, &p) in spec.bins.iter().enumerate() {
        out.push_str(&format!("{:.6},{}\n", spec.bin_center_hz(i), watts_to_dbm(p)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMeta {
    pub reference_plane: ReferencePlane,
    pub rbw_hz: f64,
    pub bin_hz: f64,
    pub f_start_hz: f64,
    pub n_bins: usize,
    pub seed: u64,
    pub switch_state: SwitchState,
}

impl SpectrumMeta {
    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::new();
        w.put("reference_plane", self.reference_plane)
            .put("rbw_hz", self.rbw_hz)
            .put("bin_hz", self.bin_hz)
            .put("f_start_hz", self.f_start_hz)
            .put("n_bins", self.n_bins)
            .put("seed", self.seed)
            .put(
                "sw1_port",
                serde_json::to_value(self.switch_state.sw1_port).unwrap().as_str().unwrap(),
            )
            .put(
                "sw2_port",
                serde_json::to_value(self.switch_state.sw2_port).unwrap().as_str().unwrap(),
            )
            .put("source_on", self.switch_state.source_on);
        w.finish()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let enum_field = |key: &str| -> Result<serde_json::Value> {
            Ok(serde_json::Value::String(kv.require::<String>(key)?))
        };
        Ok(Self {
            reference_plane: kv.require::<String>("reference_plane")?.parse()?,
            rbw_hz: kv.require("rbw_hz")?,
            bin_hz: kv.require("bin_hz")?,
            f_start_hz: kv.require("f_start_hz")?,
            n_bins: kv.require("n_bins")?,
            seed: kv.require("seed")?,
            switch_state: SwitchState {
                sw1_port: serde_json::from_value(enum_field("sw1_port")?)?,
                sw2_port: serde_json::from_value(enum_field("sw2_port")?)?,
                source_on: kv.require("source_on")?,
            },
        })
    }
}

pub fn read_spectrum(csv_path: &Path, meta: &SpectrumMeta) -> Result<Spectrum> {
    let text = fs::read_to_string(csv_path)?;
    let mut bins = Vec::with_capacity(meta.n_bins);
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let dbm: f64 = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: csv_path.to_path_buf(),
                line: i + 1,
                msg: "expected frequency_hz,power_dbm".into(),
            })?;
        bins.push(dbm_to_watts(dbm));
    }
    if bins.len() != meta.n_bins {
        return Err(Error::Parse {
            path: csv_path.to_path_buf(),
            line: 0,
            msg: format!("expected {} bins, found {}", meta.n_bins, bins.len()),
        });
    }
    Ok(Spectrum {
        f_start_hz: meta.f_start_hz,
        bin_hz: meta.bin_hz,
        rbw_hz: meta.rbw_hz,
        reference_plane: meta.reference_plane,
        bins,
    })
}
