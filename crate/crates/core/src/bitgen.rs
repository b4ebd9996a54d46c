//! Random bit sources that drive branch selection.
//!
//! Classical bits come from a seeded pseudo-random generator. Quantum bits are
//! simulated shot by shot from three scalar fidelities: active reset, the
//! Hadamard gate, and classical readout. The per-source streams are then
//! interleaved into one mixed sample whose composition is tracked but whose
//! order carries no information about the source.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{KeyValueWriter, KeyValues};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitSource {
    Classical,
    QubitA,
    QubitB,
}

impl BitSource {
    pub const ALL: [BitSource; 3] = [BitSource::Classical, BitSource::QubitA, BitSource::QubitB];

    pub fn as_str(self) -> &'static str {
        match self {
            BitSource::Classical => "classical",
            BitSource::QubitA => "qubit_a",
            BitSource::QubitB => "qubit_b",
        }
    }

    pub fn is_quantum(self) -> bool {
        !matches!(self, BitSource::Classical)
    }
}

impl fmt::Display for BitSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BitSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(BitSource::Classical),
            "qubit_a" => Ok(BitSource::QubitA),
            "qubit_b" => Ok(BitSource::QubitB),
            other => Err(Error::Domain(format!("unknown bit source {other:?}"))),
        }
    }
}

/// Gate, readout and reset fidelities of one qubit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityModel {
    pub f_hadamard: f64,
    pub f_readout: f64,
    pub f_reset: f64,
}

impl FidelityModel {
    pub fn new(f_hadamard: f64, f_readout: f64, f_reset: f64) -> Result<Self> {
        for (name, v) in [
            ("f_hadamard", f_hadamard),
            ("f_readout", f_readout),
            ("f_reset", f_reset),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(Self {
            f_hadamard,
            f_readout,
            f_reset,
        })
    }

    /// Fidelities of qubit 101.
    pub fn qubit_101() -> Self {
        Self {
            f_hadamard: 0.99,
            f_readout: 0.983,
            f_reset: 0.99,
        }
    }

    /// Fidelities of qubit 102.
    pub fn qubit_102() -> Self {
        Self {
            f_hadamard: 0.99,
            f_readout: 0.861,
            f_reset: 0.99,
        }
    }

    pub fn perfect() -> Self {
        Self {
            f_hadamard: 1.0,
            f_readout: 1.0,
            f_reset: 1.0,
        }
    }

    /// Magnitude of the |α|² deviation from 1/2 produced by the imperfect gate.
    pub fn hadamard_skew(&self) -> f64 {
        (1.0 - self.f_hadamard).sqrt()
    }

    /// Closed-form probability of observing 1 for a given skew sign.
    pub fn p_observe_one(&self, sign: HadamardSign) -> f64 {
        let p = 0.5 + sign.factor() * self.hadamard_skew();
        p * self.f_readout + (1.0 - p) * (1.0 - self.f_readout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HadamardSign {
    Above,
    Below,
}

impl HadamardSign {
    pub fn factor(self) -> f64 {
        match self {
            HadamardSign::Above => 1.0,
            HadamardSign::Below => -1.0,
        }
    }

    /// The sign used by [`simulate_qubit_bits`] for `seed`.
    pub fn for_seed(seed: u64) -> Self {
        if stream_rng(seed, SIGN_STREAM).random::<bool>() {
            HadamardSign::Above
        } else {
            HadamardSign::Below
        }
    }
}

const SIGN_STREAM: u64 = 1;
const SHOT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitRecord {
    pub id: u64,
    pub source: BitSource,
    pub value: u8,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTally {
    pub zeros: usize,
    pub ones: usize,
}

impl SourceTally {
    pub fn total(&self) -> usize {
        self.zeros + self.ones
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedSample {
    pub bits: Vec<BitRecord>,
    pub provenance_seed: u64,
    pub counts: BTreeMap<BitSource, SourceTally>,
}

impl MixedSample {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// The same sample with every bit value inverted.
    pub fn flipped(&self) -> Self {
        let bits: Vec<_> = self
            .bits
            .iter()
            .map(|b| BitRecord {
                value: 1 - b.value,
                ..*b
            })
            .collect();
        Self {
            counts: tally(&bits),
            bits,
            provenance_seed: self.provenance_seed,
        }
    }
}

pub fn tally(bits: &[BitRecord]) -> BTreeMap<BitSource, SourceTally> {
    let mut counts = BTreeMap::new();
    for b in bits {
        let t: &mut SourceTally = counts.entry(b.source).or_default();
        if b.value == 0 {
            t.zeros += 1;
        } else {
            t.ones += 1;
        }
    }
    counts
}

pub fn generate_classical_bits(n: usize, seed: u64) -> Result<Vec<BitRecord>> {
    if n == 0 {
        return Err(Error::EmptySample("classical bit count is zero"));
    }
    let mut rng = stream_rng(seed, 0);
    Ok((0..n as u64)
        .map(|id| BitRecord {
            id,
            source: BitSource::Classical,
            value: u8::from(rng.random::<bool>()),
        })
        .collect())
}

/// One simulated measurement: the value the ideal readout would report and the
/// value actually observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QubitShot {
    pub true_value: u8,
    pub observed: u8,
    pub reset_failed: bool,
}

pub fn simulate_qubit_shots(n: usize, model: &FidelityModel, seed: u64) -> Result<Vec<QubitShot>> {
    if n == 0 {
        return Err(Error::EmptySample("qubit shot count is zero"));
    }
    let model = FidelityModel::new(model.f_hadamard, model.f_readout, model.f_reset)?;
    if model.hadamard_skew() > 0.5 {
        return Err(Error::Domain(format!(
            "f_hadamard = {} gives |alpha|^2 outside [0, 1]",
            model.f_hadamard
        )));
    }
    let sign = HadamardSign::for_seed(seed);
    let p_one = 0.5 + sign.factor() * model.hadamard_skew();
    let mut rng = stream_rng(seed, SHOT_STREAM);
    Ok((0..n)
        .map(|_| {
            // A failed reset leaves |1>; H still yields an equal-weight
            // superposition, so outcome statistics are unchanged.
            let reset_failed = rng.random::<f64>() >= model.f_reset;
            let true_value = u8::from(rng.random::<f64>() < p_one);
            let flipped = rng.random::<f64>() >= model.f_readout;
            QubitShot {
                true_value,
                observed: if flipped { 1 - true_value } else { true_value },
                reset_failed,
            }
        })
        .collect())
}

pub fn simulate_qubit_bits(
    n: usize,
    model: &FidelityModel,
    source: BitSource,
    seed: u64,
) -> Result<Vec<BitRecord>> {
    if !source.is_quantum() {
        return Err(Error::Domain("qubit bits need a quantum source".into()));
    }
    Ok(simulate_qubit_shots(n, model, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| BitRecord {
            id: i as u64,
            source,
            value: s.observed,
        })
        .collect())
}

/// Uniformly random interleaving of the input samples that keeps each
/// sample's internal order. Output ids are positions in the mixed sequence.
pub fn mix_samples(samples: &[Vec<BitRecord>], seed: u64) -> Result<MixedSample> {
    let total: usize = samples.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptySample("nothing to mix"));
    }
    let mut order: Vec<usize> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| std::iter::repeat_n(i, s.len()))
        .collect();
    order.shuffle(&mut stream_rng(seed, 0));

    let mut cursors = vec![0usize; samples.len()];
    let bits: Vec<BitRecord> = order
        .into_iter()
        .enumerate()
        .map(|(pos, which)| {
            let rec = samples[which][cursors[which]];
            cursors[which] += 1;
            BitRecord {
                id: pos as u64,
                ..rec
            }
        })
        .collect();
    Ok(MixedSample {
        counts: tally(&bits),
        bits,
        provenance_seed: seed,
    })
}

/// Everything needed to regenerate a mixed sample from scratch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub n_classical: usize,
    pub n_qubit_a: usize,
    pub n_qubit_b: usize,
    pub fidelity_a: FidelityModel,
    pub fidelity_b: FidelityModel,
    pub seed: u64,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self {
            n_classical: 25,
            n_qubit_a: 21,
            n_qubit_b: 20,
            fidelity_a: FidelityModel::qubit_101(),
            fidelity_b: FidelityModel::qubit_102(),
            seed: 0,
        }
    }
}

impl SampleSpec {
    pub fn build(&self) -> Result<MixedSample> {
        let mut parts = Vec::new();
        if self.n_classical > 0 {
            parts.push(generate_classical_bits(self.n_classical, derive_seed(self.seed, 1))?);
        }
        if self.n_qubit_a > 0 {
            parts.push(simulate_qubit_bits(
                self.n_qubit_a,
                &self.fidelity_a,
                BitSource::QubitA,
                derive_seed(self.seed, 2),
            )?);
        }
        if self.n_qubit_b > 0 {
            parts.push(simulate_qubit_bits(
                self.n_qubit_b,
                &self.fidelity_b,
                BitSource::QubitB,
                derive_seed(self.seed, 3),
            )?);
        }
        let mut sample = mix_samples(&parts, derive_seed(self.seed, 4))?;
        sample.provenance_seed = self.seed;
        Ok(sample)
    }

    /// Lowest readout fidelity among the quantum sources actually used.
    pub fn worst_readout_fidelity(&self) -> Option<f64> {
        let mut out: Option<f64> = None;
        for (n, m) in [(self.n_qubit_a, &self.fidelity_a), (self.n_qubit_b, &self.fidelity_b)] {
            if n > 0 {
                out = Some(out.map_or(m.f_readout, |o| o.min(m.f_readout)));
            }
        }
        out
    }

    pub fn worst_hadamard_fidelity(&self) -> Option<f64> {
        let mut out: Option<f64> = None;
        for (n, m) in [(self.n_qubit_a, &self.fidelity_a), (self.n_qubit_b, &self.fidelity_b)] {
            if n > 0 {
                out = Some(out.map_or(m.f_hadamard, |o| o.min(m.f_hadamard)));
            }
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut w = KeyValueWriter::new();
        w.comment("bit sample provenance")
            .put("seed", self.seed)
            .put("n_classical", self.n_classical)
            .put("n_qubit_a", self.n_qubit_a)
            .put("n_qubit_b", self.n_qubit_b);
        for (prefix, m) in [("qubit_a", &self.fidelity_a), ("qubit_b", &self.fidelity_b)] {
            w.put(&format!("{prefix}.f_hadamard"), m.f_hadamard)
                .put(&format!("{prefix}.f_readout"), m.f_readout)
                .put(&format!("{prefix}.f_reset"), m.f_reset);
        }
        w.finish()
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let (fidelity_a, fidelity_b) = read_fidelities(kv)?;
        Ok(Self {
            n_classical: kv.require("n_classical")?,
            n_qubit_a: kv.require("n_qubit_a")?,
            n_qubit_b: kv.require("n_qubit_b")?,
            fidelity_a,
            fidelity_b,
            seed: kv.require("seed")?,
        })
    }
}

/// Reads `qubit_a.*` / `qubit_b.*` fidelity keys, defaulting to qubits 101/102.
pub fn read_fidelities(kv: &KeyValues) -> Result<(FidelityModel, FidelityModel)> {
    let one = |prefix: &str, d: FidelityModel| -> Result<FidelityModel> {
        FidelityModel::new(
            kv.get(&format!("{prefix}.f_hadamard"))?.unwrap_or(d.f_hadamard),
            kv.get(&format!("{prefix}.f_readout"))?.unwrap_or(d.f_readout),
            kv.get(&format!("{prefix}.f_reset"))?.unwrap_or(d.f_reset),
        )
    };
    Ok((
        one("qubit_a", FidelityModel::qubit_101())?,
        one("qubit_b", FidelityModel::qubit_102())?,
    ))
}

/// A row of `bits.csv`; `value` is `None` where it was withheld.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitRow {
    pub id: u64,
    pub source: BitSource,
    pub value: Option<u8>,
}

pub fn bits_csv(sample: &MixedSample, blind: bool) -> String {
    let mut out = String::from("id,source,value\n");
    for b in &sample.bits {
        if blind && b.source.is_quantum() {
            out.push_str(&format!("{},{},\n", b.id, b.source));
        } else {
            out.push_str(&format!("{},{},{}\n", b.id, b.source, b.value));
        }
    }
    out
}

pub fn read_bits_csv(path: &Path) -> Result<Vec<BitRow>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "id,source,value" => {}
        _ => return Err(bad(1, "expected header id,source,value".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 columns, got {}", cols.len())));
        }
        let id = cols[0].parse().map_err(|e| bad(i + 1, format!("id: {e}")))?;
        let source = cols[1].parse().map_err(|e: Error| bad(i + 1, e.to_string()))?;
        let value = match cols[2] {
            "" => None,
            "0" => Some(0),
            "1" => Some(1),
            v => return Err(bad(i + 1, format!("bit value must be 0 or 1, got {v:?}"))),
        };
        rows.push(BitRow { id, source, value });
    }
    Ok(rows)
}
