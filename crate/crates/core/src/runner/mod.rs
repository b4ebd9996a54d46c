//! The per-bit experiment loop, its ledger and the run directory.
//!
//! Each bit in the mixed sample selects a branch: bit 0 terminates the HEMT
//! input and records a spectrum, bit 1 switches the source on into the HP load
//! and dwells. Both branches take the same wall time, so timestamps carry no
//! information about the bit.
//!
//! Run directory layout:
//!
//! ```text
//! run.json          manifest (seed, chain config, timing, blinding, sample provenance)
//! ledger.jsonl      one JSON object per bit
//! spectra/NNNN.csv  frequency_hz,power_dbm
//! spectra/NNNN.meta plane, rbw, seed, switch state
//! analysis.csv      per-spectrum statistics (written by analyze)
//! report.json       limit reports (written by analyze)
//! ```

pub mod analysis;
pub mod blinding;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bitgen::{BitSource, MixedSample, SampleSpec};
use crate::error::{Error, Result};
use crate::kv::{KeyValueWriter, KeyValues};
use crate::rfchain::{
    read_spectrum, spectrum_csv, switch_state_for, synthesize_spectrum, ChainConfig, RawSpectrum, SpectrumMeta,
    SwitchState,
};
use crate::rng::derive_seed;

pub use analysis::{analyze, write_analysis, Analysis, AnalysisOptions};
pub use blinding::{Artifact, ArtifactSink, BlindingPolicy, Provenance, Quantity};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bit0Steps {
    pub configure_switches_s: f64,
    pub terminate_input_s: f64,
    pub acquire_spectrum_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bit1Steps {
    pub configure_switches_s: f64,
    pub source_on_s: f64,
    pub dwell_s: f64,
    pub source_off_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub bit0: Bit0Steps,
    pub bit1: Bit1Steps,
    pub tolerance_s: f64,
}

impl Default for TimingProfile {
    /// 1000 s acquisition, the natural scale for a 1 mHz RBW.
    fn default() -> Self {
        Self {
            bit0: Bit0Steps {
                configure_switches_s: 2.0,
                terminate_input_s: 0.5,
                acquire_spectrum_s: 1000.0,
            },
            bit1: Bit1Steps {
                configure_switches_s: 2.0,
                source_on_s: 0.5,
                dwell_s: 999.5,
                source_off_s: 0.5,
            },
            tolerance_s: 0.0,
        }
    }
}

impl TimingProfile {
    pub fn total_bit0(&self) -> f64 {
        let b = &self.bit0;
        b.configure_switches_s + b.terminate_input_s + b.acquire_spectrum_s
    }

    pub fn total_bit1(&self) -> f64 {
        let b = &self.bit1;
        b.configure_switches_s + b.source_on_s + b.dwell_s + b.source_off_s
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            bit0: Bit0Steps {
                configure_switches_s: self.bit0.configure_switches_s * k,
                terminate_input_s: self.bit0.terminate_input_s * k,
                acquire_spectrum_s: self.bit0.acquire_spectrum_s * k,
            },
            bit1: Bit1Steps {
                configure_switches_s: self.bit1.configure_switches_s * k,
                source_on_s: self.bit1.source_on_s * k,
                dwell_s: self.bit1.dwell_s * k,
                source_off_s: self.bit1.source_off_s * k,
            },
            tolerance_s: self.tolerance_s,
        }
    }

    fn steps(&self, bit: u8) -> Vec<(Action, f64)> {
        if bit == 0 {
            vec![
                (Action::ConfigureSwitches, self.bit0.configure_switches_s),
                (Action::TerminateInput, self.bit0.terminate_input_s),
                (Action::AcquireSpectrum, self.bit0.acquire_spectrum_s),
            ]
        } else {
            vec![
                (Action::ConfigureSwitches, self.bit1.configure_switches_s),
                (Action::SourceOn, self.bit1.source_on_s),
                (Action::Dwell, self.bit1.dwell_s),
                (Action::SourceOff, self.bit1.source_off_s),
            ]
        }
    }

    /// Reads `timing.*` keys; absent keys keep the defaults.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut t = Self::default();
        let slots: [(&str, &mut f64); 8] = [
            ("timing.bit0.configure_switches_s", &mut t.bit0.configure_switches_s),
            ("timing.bit0.terminate_input_s", &mut t.bit0.terminate_input_s),
            ("timing.bit0.acquire_spectrum_s", &mut t.bit0.acquire_spectrum_s),
            ("timing.bit1.configure_switches_s", &mut t.bit1.configure_switches_s),
            ("timing.bit1.source_on_s", &mut t.bit1.source_on_s),
            ("timing.bit1.dwell_s", &mut t.bit1.dwell_s),
            ("timing.bit1.source_off_s", &mut t.bit1.source_off_s),
            ("timing.tolerance_s", &mut t.tolerance_s),
        ];
        for (key, slot) in slots {
            if let Some(v) = kv.get::<f64>(key)? {
                *slot = v;
            }
        }
        Ok(t)
    }

    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::new();
        w.comment("branch timing, seconds")
            .put("timing.bit0.configure_switches_s", self.bit0.configure_switches_s)
            .put("timing.bit0.terminate_input_s", self.bit0.terminate_input_s)
            .put("timing.bit0.acquire_spectrum_s", self.bit0.acquire_spectrum_s)
            .put("timing.bit1.configure_switches_s", self.bit1.configure_switches_s)
            .put("timing.bit1.source_on_s", self.bit1.source_on_s)
            .put("timing.bit1.dwell_s", self.bit1.dwell_s)
            .put("timing.bit1.source_off_s", self.bit1.source_off_s)
            .put("timing.tolerance_s", self.tolerance_s);
        w.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncReport {
    pub delta_s: f64,
    pub pass: bool,
}

pub fn check_branch_synchronization(timing: &TimingProfile) -> SyncReport {
    let delta_s = (timing.total_bit0() - timing.total_bit1()).abs();
    SyncReport {
        delta_s,
        pass: delta_s <= timing.tolerance_s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    ConfigureSwitches,
    TerminateInput,
    AcquireSpectrum,
    SourceOn,
    Dwell,
    SourceOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub action: Action,
    pub start_s: f64,
    pub end_s: f64,
}

/// One bit of the run. Fields that would reveal a blinded bit are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub id: u64,
    pub source: BitSource,
    pub start_s: f64,
    pub end_s: f64,
    pub spectrum_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_state: Option<SwitchState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<ActionRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<String>,
}

impl LedgerEntry {
    fn provenance(&self) -> Provenance {
        if self.source.is_quantum() {
            Provenance::Quantum
        } else {
            Provenance::Classical
        }
    }

    pub fn is_redacted(&self) -> bool {
        self.value.is_none()
    }
}

/// Data held only in memory for the lifetime of the process.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatileBit {
    pub value: u8,
    pub spectrum: RawSpectrum,
    pub switch_state: SwitchState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub master_seed: u64,
    pub epsilon_true: f64,
    pub blinded: bool,
    pub config: ChainConfig,
    pub timing: TimingProfile,
    pub sample_spec: Option<SampleSpec>,
    pub n_bits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLedger {
    pub manifest: RunManifest,
    pub entries: Vec<LedgerEntry>,
    pub volatile: BTreeMap<u64, VolatileBit>,
}

impl RunLedger {
    pub fn blinded(&self) -> bool {
        self.manifest.blinded
    }
}

/// Leakage reaches a spectrum only when a quantum bit put the apparatus in
/// the measuring branch; classical bits create no branches.
pub fn leakage_epsilon(source: BitSource, bit: u8, epsilon_true: f64) -> f64 {
    if source.is_quantum() && bit == 0 {
        epsilon_true
    } else {
        0.0
    }
}

pub fn spectrum_path(id: u64) -> String {
    format!("spectra/{id:04}.csv")
}

fn meta_path(csv: &str) -> String {
    csv.trim_end_matches(".csv").to_string() + ".meta"
}

pub fn run_experiment(
    cfg: &ChainConfig,
    sample: &MixedSample,
    timing: &TimingProfile,
    epsilon_true: f64,
    seed: u64,
    policy: &BlindingPolicy,
) -> Result<RunLedger> {
    cfg.validate()?;
    let sync = check_branch_synchronization(timing);
    if !sync.pass {
        return Err(Error::Synchronization {
            delta_s: sync.delta_s,
            tolerance_s: timing.tolerance_s,
        });
    }
    if !(epsilon_true >= 0.0) {
        return Err(Error::Domain(format!("epsilon_true must be >= 0, got {epsilon_true}")));
    }

    let mut entries = Vec::with_capacity(sample.len());
    let mut volatile = BTreeMap::new();
    let mut clock = 0.0;
    for bit in &sample.bits {
        let switch_state = switch_state_for(bit.value)?;
        let spectrum_seed = derive_seed(seed, bit.id);
        let synth = synthesize_spectrum(
            cfg,
            bit.value,
            leakage_epsilon(bit.source, bit.value, epsilon_true),
            spectrum_seed,
        )?;

        let start_s = clock;
        let actions: Vec<ActionRecord> = timing
            .steps(bit.value)
            .into_iter()
            .map(|(action, dt)| {
                let rec = ActionRecord {
                    action,
                    start_s: clock,
                    end_s: clock + dt,
                };
                clock += dt;
                rec
            })
            .collect();

        let hide = policy.enabled && bit.source.is_quantum();
        entries.push(LedgerEntry {
            id: bit.id,
            source: bit.source,
            start_s,
            end_s: clock,
            spectrum_seed,
            value: (!hide).then_some(bit.value),
            switch_state: (!hide).then_some(switch_state),
            actions: (!hide).then_some(actions),
            spectrum: (!hide).then(|| spectrum_path(bit.id)),
        });
        volatile.insert(
            bit.id,
            VolatileBit {
                value: bit.value,
                spectrum: synth.spectrum,
                switch_state,
            },
        );
    }

    Ok(RunLedger {
        manifest: RunManifest {
            master_seed: seed,
            epsilon_true,
            blinded: policy.enabled,
            config: cfg.clone(),
            timing: *timing,
            sample_spec: None,
            n_bits: entries.len(),
        },
        entries,
        volatile,
    })
}

struct LedgerLines<'a>(&'a [LedgerEntry]);

impl Artifact for LedgerLines<'_> {
    fn contents(&self) -> Vec<(Provenance, Quantity)> {
        let mut out = Vec::new();
        for e in self.0 {
            let p = e.provenance();
            if e.value.is_some() {
                out.push((p, Quantity::BitValue));
            }
            if e.switch_state.is_some() {
                out.push((p, Quantity::SwitchState));
            }
            if e.actions.is_some() {
                out.push((p, Quantity::ActionSequence));
            }
        }
        out
    }

    fn render(&self) -> Result<String> {
        let mut s = String::new();
        for e in self.0 {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

impl Artifact for RunManifest {
    fn contents(&self) -> Vec<(Provenance, Quantity)> {
        Vec::new()
    }

    fn render(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

struct SpectrumFile<'a> {
    provenance: Provenance,
    spectrum: &'a RawSpectrum,
}

impl Artifact for SpectrumFile<'_> {
    fn contents(&self) -> Vec<(Provenance, Quantity)> {
        vec![(self.provenance, Quantity::SpectrumBins)]
    }

    fn render(&self) -> Result<String> {
        spectrum_csv(self.spectrum)
    }
}

struct SpectrumSidecar {
    provenance: Provenance,
    meta: SpectrumMeta,
}

impl Artifact for SpectrumSidecar {
    fn contents(&self) -> Vec<(Provenance, Quantity)> {
        vec![(self.provenance, Quantity::SwitchState)]
    }

    fn render(&self) -> Result<String> {
        Ok(self.meta.to_kv())
    }
}

/// Writes manifest, ledger and every spectrum the ledger references.
pub fn persist_run(ledger: &RunLedger, sink: &mut ArtifactSink) -> Result<()> {
    for e in &ledger.entries {
        let Some(rel) = &e.spectrum else { continue };
        let bit = ledger
            .volatile
            .get(&e.id)
            .ok_or_else(|| Error::IncompleteRun(format!("no spectrum in memory for bit {}", e.id)))?;
        sink.emit(
            rel,
            &SpectrumFile {
                provenance: e.provenance(),
                spectrum: &bit.spectrum,
            },
        )?;
        sink.emit(
            meta_path(rel),
            &SpectrumSidecar {
                provenance: e.provenance(),
                meta: SpectrumMeta {
                    reference_plane: bit.spectrum.reference_plane,
                    rbw_hz: bit.spectrum.rbw_hz,
                    bin_hz: bit.spectrum.bin_hz,
                    f_start_hz: bit.spectrum.f_start_hz,
                    n_bins: bit.spectrum.len(),
                    seed: e.spectrum_seed,
                    switch_state: bit.switch_state,
                },
            },
        )?;
    }
    sink.emit("ledger.jsonl", &LedgerLines(&ledger.entries))?;
    sink.emit("run.json", &ledger.manifest)?;
    Ok(())
}

/// Loads a run directory. Persisted spectra are read back; blinded bits are
/// regenerated in memory from the recorded sample provenance and seeds.
pub fn load_run(dir: &Path) -> Result<RunLedger> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("run.json"))?)?;
    let mut entries = Vec::new();
    for line in fs::read_to_string(dir.join("ledger.jsonl"))?.lines() {
        if !line.trim().is_empty() {
            entries.push(serde_json::from_str::<LedgerEntry>(line)?);
        }
    }
    if entries.len() != manifest.n_bits {
        return Err(Error::IncompleteRun(format!(
            "ledger has {} entries, manifest expects {}",
            entries.len(),
            manifest.n_bits
        )));
    }
    let mut ledger = RunLedger {
        manifest,
        entries,
        volatile: BTreeMap::new(),
    };
    rehydrate(&mut ledger, dir)?;
    Ok(ledger)
}

fn rehydrate(ledger: &mut RunLedger, dir: &Path) -> Result<()> {
    let needs_regen = ledger.entries.iter().any(LedgerEntry::is_redacted);
    let regenerated = if needs_regen {
        let spec = ledger.manifest.sample_spec.as_ref().ok_or_else(|| {
            Error::IncompleteRun("redacted bits but no sample provenance in run.json".into())
        })?;
        let sample = spec.build()?;
        if sample.len() != ledger.entries.len()
            || sample.bits.iter().zip(&ledger.entries).any(|(b, e)| b.id != e.id || b.source != e.source)
        {
            return Err(Error::IncompleteRun(
                "regenerated sample does not match the ledger's source sequence".into(),
            ));
        }
        Some(sample)
    } else {
        None
    };

    for (idx, e) in ledger.entries.iter().enumerate() {
        let bit = match (&e.spectrum, e.value) {
            (Some(rel), Some(value)) => {
                let csv = dir.join(rel);
                let meta_file = dir.join(meta_path(rel));
                if !csv.exists() || !meta_file.exists() {
                    return Err(Error::IncompleteRun(format!("missing spectrum {}", csv.display())));
                }
                let meta = SpectrumMeta::from_kv(&KeyValues::read(&meta_file)?)?;
                VolatileBit {
                    value,
                    spectrum: read_spectrum(&csv, &meta)?,
                    switch_state: meta.switch_state,
                }
            }
            (None, None) => {
                let value = regenerated.as_ref().map(|s| s.bits[idx].value).ok_or_else(|| {
                    Error::IncompleteRun(format!("bit {} has no value or provenance", e.id))
                })?;
                let synth = synthesize_spectrum(
                    &ledger.manifest.config,
                    value,
                    leakage_epsilon(e.source, value, ledger.manifest.epsilon_true),
                    e.spectrum_seed,
                )?;
                VolatileBit {
                    value,
                    spectrum: synth.spectrum,
                    switch_state: synth.switch_state,
                }
            }
            _ => {
                return Err(Error::IncompleteRun(format!(
                    "bit {} has no spectrum on disk",
                    e.id
                )))
            }
        };
        ledger.volatile.insert(e.id, bit);
    }
    Ok(())
}

pub fn run_dir_spectra(dir: &Path) -> Result<Vec<PathBuf>> {
    let spectra = dir.join("spectra");
    if !spectra.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(spectra)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitgen::SampleSpec;

    fn sample(seed: u64) -> MixedSample {
        SampleSpec {
            seed,
            ..SampleSpec::default()
        }
        .build()
        .unwrap()
    }

    #[test]
    fn default_timing_is_balanced() {
        let r = check_branch_synchronization(&TimingProfile::default());
        assert_eq!(r.delta_s, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn half_second_mismatch_fails() {
        let mut t = TimingProfile::default();
        t.bit1.dwell_s += 0.5;
        let r = check_branch_synchronization(&t);
        assert_eq!(r.delta_s, 0.5);
        assert!(!r.pass);
        let err = run_experiment(&ChainConfig::default(), &sample(0), &t, 0.0, 0, &BlindingPolicy::open());
        assert!(matches!(err, Err(Error::Synchronization { .. })));
    }

    #[test]
    fn scaling_keeps_balance() {
        for k in [0.001, 0.5, 3.0, 1e4] {
            // powers of two avoid rounding; others rely on equal sums scaling equally
            let t = TimingProfile {
                tolerance_s: 1e-9 * k,
                ..TimingProfile::default()
            }
            .scaled(k);
            assert!(check_branch_synchronization(&t).pass, "{k}");
        }
    }

    #[test]
    fn one_entry_per_bit() {
        let s = sample(1);
        let ledger = run_experiment(
            &ChainConfig::default(),
            &s,
            &TimingProfile::default(),
            0.0,
            7,
            &BlindingPolicy::open(),
        )
        .unwrap();
        assert_eq!(ledger.entries.len(), 66);
        assert_eq!(ledger.volatile.len(), 66);
        assert!(ledger.entries.iter().all(|e| e.spectrum.is_some()));
        let total = TimingProfile::default().total_bit0();
        for (i, e) in ledger.entries.iter().enumerate() {
            assert_eq!(e.start_s, i as f64 * total);
            assert_eq!(e.end_s - e.start_s, total);
        }
    }

    #[test]
    fn empty_sample_gives_empty_ledger() {
        let empty = MixedSample {
            bits: vec![],
            provenance_seed: 0,
            counts: Default::default(),
        };
        let ledger = run_experiment(
            &ChainConfig::default(),
            &empty,
            &TimingProfile::default(),
            0.0,
            0,
            &BlindingPolicy::open(),
        )
        .unwrap();
        assert!(ledger.entries.is_empty());
    }

    #[test]
    fn leakage_changes_only_quantum_zero_spectra_at_f0() {
        let cfg = ChainConfig::default();
        let s = sample(2);
        let t = TimingProfile::default();
        let a = run_experiment(&cfg, &s, &t, 0.0, 3, &BlindingPolicy::open()).unwrap();
        let b = run_experiment(&cfg, &s, &t, 1e-12, 3, &BlindingPolicy::open()).unwrap();
        let c = cfg.center_bin();
        let mut changed = 0;
        for bit in &s.bits {
            let (x, y) = (&a.volatile[&bit.id].spectrum, &b.volatile[&bit.id].spectrum);
            if bit.value == 1 || !bit.source.is_quantum() {
                assert_eq!(x, y);
                continue;
            }
            changed += 1;
            let center = y.bins[c] - x.bins[c];
            assert!(center > 0.0);
            for i in (0..x.len()).filter(|&i| i != c) {
                assert!((y.bins[i] - x.bins[i]).abs() < 1e-3 * center);
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn flipped_sample_swaps_branches() {
        let cfg = ChainConfig::default();
        let s = sample(4);
        let t = TimingProfile::default();
        let a = run_experiment(&cfg, &s, &t, 0.0, 9, &BlindingPolicy::open()).unwrap();
        let b = run_experiment(&cfg, &s.flipped(), &t, 0.0, 9, &BlindingPolicy::open()).unwrap();
        let acquires = |e: &LedgerEntry| {
            e.actions
                .as_ref()
                .unwrap()
                .iter()
                .any(|r| r.action == Action::AcquireSpectrum)
        };
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_ne!(acquires(x), acquires(y));
            assert_eq!((x.start_s, x.end_s), (y.start_s, y.end_s));
        }
    }

    #[test]
    fn blinded_entries_hide_quantum_bits() {
        let ledger = run_experiment(
            &ChainConfig::default(),
            &sample(5),
            &TimingProfile::default(),
            0.0,
            1,
            &BlindingPolicy::blind(),
        )
        .unwrap();
        for e in &ledger.entries {
            assert_eq!(e.is_redacted(), e.source.is_quantum());
            if e.source.is_quantum() {
                assert!(e.switch_state.is_none() && e.actions.is_none() && e.spectrum.is_none());
            }
        }
    }

    #[test]
    fn persisted_run_is_deterministic_and_reloads() {
        let cfg = ChainConfig::default();
        let s = sample(6);
        let t = TimingProfile::default();
        let mut dirs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let ledger = run_experiment(&cfg, &s, &t, 5e-13, 11, &BlindingPolicy::open()).unwrap();
            let mut sink = ArtifactSink::new(dir.path(), BlindingPolicy::open()).unwrap();
            persist_run(&ledger, &mut sink).unwrap();
            dirs.push((dir, ledger));
        }
        let (d0, l0) = &dirs[0];
        let (d1, _) = &dirs[1];
        for name in ["ledger.jsonl", "run.json", "spectra/0000.csv", "spectra/0065.meta"] {
            assert_eq!(
                fs::read(d0.path().join(name)).unwrap(),
                fs::read(d1.path().join(name)).unwrap(),
                "{name}"
            );
        }
        let back = load_run(d0.path()).unwrap();
        assert_eq!(back.entries, l0.entries);
        for (id, v) in &l0.volatile {
            let w = &back.volatile[id];
            assert_eq!(v.value, w.value);
            for (a, b) in v.spectrum.bins.iter().zip(&w.spectrum.bins) {
                assert!((a / b - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_spectrum_is_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = run_experiment(
            &ChainConfig::default(),
            &sample(8),
            &TimingProfile::default(),
            0.0,
            2,
            &BlindingPolicy::open(),
        )
        .unwrap();
        let mut sink = ArtifactSink::new(dir.path(), BlindingPolicy::open()).unwrap();
        persist_run(&ledger, &mut sink).unwrap();
        fs::remove_file(dir.path().join("spectra/0003.csv")).unwrap();
        assert!(matches!(load_run(dir.path()), Err(Error::IncompleteRun(_))));
    }

    #[test]
    fn blinded_run_without_provenance_cannot_reload() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = run_experiment(
            &ChainConfig::default(),
            &sample(8),
            &TimingProfile::default(),
            0.0,
            2,
            &BlindingPolicy::blind(),
        )
        .unwrap();
        let mut sink = ArtifactSink::new(dir.path(), BlindingPolicy::blind()).unwrap();
        persist_run(&ledger, &mut sink).unwrap();
        assert!(matches!(load_run(dir.path()), Err(Error::IncompleteRun(_))));
    }

    #[test]
    fn timing_kv_round_trip() {
        let mut t = TimingProfile::default();
        t.bit1.dwell_s = 12.0;
        let kv = KeyValues::parse(&t.to_kv(), "run.cfg").unwrap();
        assert_eq!(TimingProfile::from_kv(&kv).unwrap(), t);
    }
}
