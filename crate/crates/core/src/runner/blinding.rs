//! Blinding policy and the single writer through which every run artifact
//! reaches disk.
//!
//! Each artifact reports which quantities it carries and whether they derive
//! from quantum or classical bits. With blinding on, the sink refuses any
//! quantum-derived quantity outside the permitted set, so the policy is
//! enforced in one place regardless of which code path produced the data.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    BitValue,
    SwitchState,
    ActionSequence,
    SpectrumBins,
    SignalPower,
    SidebandStats,
    Excess,
    FitParameters,
    AggregateMean,
    AggregateSpread,
    PowerLimit,
    ExcessDetected,
    EpsilonLimit,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::BitValue => "bit_value",
            Quantity::SwitchState => "switch_state",
            Quantity::ActionSequence => "action_sequence",
            Quantity::SpectrumBins => "spectrum_bins",
            Quantity::SignalPower => "signal_power",
            Quantity::SidebandStats => "sideband_stats",
            Quantity::Excess => "excess",
            Quantity::FitParameters => "fit_parameters",
            Quantity::AggregateMean => "aggregate_mean",
            Quantity::AggregateSpread => "aggregate_spread",
            Quantity::PowerLimit => "power_limit",
            Quantity::ExcessDetected => "excess_detected",
            Quantity::EpsilonLimit => "epsilon_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Classical,
    Quantum,
    /// Configuration, seeds, timing: not derived from any bit.
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlindingPolicy {
    pub enabled: bool,
    pub permitted_outputs: BTreeSet<Quantity>,
}

impl BlindingPolicy {
    pub fn blind() -> Self {
        Self {
            enabled: true,
            permitted_outputs: [Quantity::ExcessDetected, Quantity::EpsilonLimit]
                .into_iter()
                .collect(),
        }
    }

    pub fn open() -> Self {
        Self {
            enabled: false,
            ..Self::blind()
        }
    }

    pub fn new(enabled: bool) -> Self {
        if enabled {
            Self::blind()
        } else {
            Self::open()
        }
    }

    pub fn allows(&self, provenance: Provenance, quantity: Quantity) -> bool {
        !self.enabled || provenance != Provenance::Quantum || self.permitted_outputs.contains(&quantity)
    }

    pub fn check(&self, provenance: Provenance, quantity: Quantity) -> Result<()> {
        if self.allows(provenance, quantity) {
            Ok(())
        } else {
            Err(Error::BlindingViolation {
                quantity: quantity.as_str(),
            })
        }
    }
}

/// Anything that can be written to a run directory.
pub trait Artifact {
    /// Every (provenance, quantity) pair present in the serialized form.
    fn contents(&self) -> Vec<(Provenance, Quantity)>;
    fn render(&self) -> Result<String>;
}

/// The only writer for run outputs.
#[derive(Debug)]
pub struct ArtifactSink {
    root: PathBuf,
    policy: BlindingPolicy,
    written: Vec<PathBuf>,
}

impl ArtifactSink {
    pub fn new(root: impl Into<PathBuf>, policy: BlindingPolicy) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            policy,
            written: Vec::new(),
        })
    }

    pub fn policy(&self) -> &BlindingPolicy {
        &self.policy
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Checks the artifact against the policy, then writes it. Nothing is
    /// written if any declared quantity is refused.
    pub fn emit(&mut self, relative: impl AsRef<Path>, artifact: &dyn Artifact) -> Result<PathBuf> {
        for (prov, q) in artifact.contents() {
            self.policy.check(prov, q)?;
        }
        let text = artifact.render()?;
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text)?;
        self.written.push(path.clone());
        Ok(path)
    }
}
