//! Post-run analysis: classical control diagnostics and limit, and the
//! blinded quantum comparison.

use serde::Serialize;

use crate::bitgen::{BitSource, FidelityModel};
use crate::calibration::{calibrate_spectrum, CalibrationSolution};
use crate::error::{Error, Result};
use crate::limits::{compare_quantum_classical, Corrections, DatasetTag, LimitReport, SigmaMode, DEFAULT_GATE_SIGMAS};
use crate::rfchain::CalibratedSpectrum;
use crate::specfit::{fit_chi2_2dof, sideband_stats, signal_region_power, Chi2Fit, DEFAULT_EXCLUDE_BINS};
use crate::stats::{exponential_cdf, ks_test, mean, sample_std};

use super::blinding::{Artifact, ArtifactSink, Provenance, Quantity};
use super::RunLedger;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub cl: f64,
    pub gate_sigmas: f64,
    pub gate_sigma: SigmaMode,
    pub exclude_bins: usize,
    pub corrections: Corrections,
    pub p_applied_w: f64,
}

impl AnalysisOptions {
    /// Defaults for a run: in-band fraction and applied power from the chain
    /// config, fidelity corrections from the worst qubit in the sample.
    pub fn for_run(ledger: &RunLedger) -> Result<Self> {
        let fallback = FidelityModel::qubit_102();
        let spec = ledger.manifest.sample_spec.as_ref();
        let f_c = spec
            .and_then(|s| s.worst_readout_fidelity())
            .unwrap_or(fallback.f_readout);
        let f_h = spec
            .and_then(|s| s.worst_hadamard_fidelity())
            .unwrap_or(fallback.f_hadamard);
        let cfg = &ledger.manifest.config;
        Ok(Self {
            cl: 0.9,
            gate_sigmas: DEFAULT_GATE_SIGMAS,
            gate_sigma: SigmaMode::PooledBinSpread,
            exclude_bins: DEFAULT_EXCLUDE_BINS,
            corrections: Corrections::from_fidelities(cfg.inband_fraction, f_c, f_h)?,
            p_applied_w: cfg.p_applied_w,
        })
    }
}

/// Per-spectrum statistics at the HEMT input plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub id: u64,
    pub source: BitSource,
    pub p_s_w: f64,
    pub sideband_mean_w: f64,
    pub sideband_sigma_w: f64,
    pub excess_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumDiagnostics {
    pub id: u64,
    pub fit: Chi2Fit,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GateSummary {
    pub classical_mean_w: f64,
    pub classical_sigma_w: f64,
    pub sigma_mode: SigmaMode,
    pub k: f64,
    pub n_classical: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumOutcome {
    pub excess_detected: bool,
    /// Present only when no excess was found.
    pub report: Option<LimitReport>,
}

/// Everything the analysis computed. Quantum rows live here only in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub blinded: bool,
    pub classical_rows: Vec<SpectrumRow>,
    pub quantum_rows: Vec<SpectrumRow>,
    pub diagnostics: Vec<SpectrumDiagnostics>,
    pub gate: GateSummary,
    pub classical_report: LimitReport,
    pub quantum: QuantumOutcome,
}

fn spectrum_row(id: u64, source: BitSource, spec: &CalibratedSpectrum, f0: f64, exclude_hz: f64) -> Result<(SpectrumRow, Vec<f64>)> {
    let p_s = signal_region_power(spec, f0)?;
    let side = sideband_stats(spec, f0, exclude_hz)?;
    let center = spec.bin_index(f0)?;
    let k = (exclude_hz / spec.bin_hz).round() as usize;
    let side_bins = spec
        .bins
        .iter()
        .enumerate()
        .filter(|(i, _)| i.abs_diff(center) > k)
        .map(|(_, &p)| p)
        .collect();
    Ok((
        SpectrumRow {
            id,
            source,
            p_s_w: p_s,
            sideband_mean_w: side.mean,
            sideband_sigma_w: side.sigma,
            excess_w: p_s - side.mean,
        },
        side_bins,
    ))
}

pub fn analyze(ledger: &RunLedger, sol: &CalibrationSolution, opts: &AnalysisOptions) -> Result<Analysis> {
    let f0 = ledger.manifest.config.f0_hz;
    let mut classical_rows = Vec::new();
    let mut quantum_rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut pooled_classical_bins = Vec::new();

    for e in &ledger.entries {
        let bit = ledger
            .volatile
            .get(&e.id)
            .ok_or_else(|| Error::IncompleteRun(format!("no spectrum for bit {}", e.id)))?;
        if bit.value != 0 {
            continue;
        }
        let cal = calibrate_spectrum(&bit.spectrum, sol)?;
        let exclude_hz = opts.exclude_bins as f64 * cal.bin_hz;
        let (row, side_bins) = spectrum_row(e.id, e.source, &cal, f0, exclude_hz)?;
        if e.source.is_quantum() {
            quantum_rows.push(row);
            continue;
        }
        let fit = fit_chi2_2dof(&side_bins)?;
        let ks = ks_test(&side_bins, exponential_cdf(mean(&side_bins)));
        diagnostics.push(SpectrumDiagnostics {
            id: e.id,
            fit,
            ks_statistic: ks.statistic,
            ks_p_value: ks.p_value,
        });
        pooled_classical_bins.extend(side_bins);
        classical_rows.push(row);
    }

    let c_excess: Vec<f64> = classical_rows.iter().map(|r| r.excess_w).collect();
    let classical_report = LimitReport::build(
        &c_excess,
        opts.cl,
        opts.p_applied_w,
        opts.corrections,
        DatasetTag::Classical,
        false,
    )?;

    let c_mean = mean(&c_excess);
    let c_sigma = match opts.gate_sigma {
        SigmaMode::PooledBinSpread => sample_std(&pooled_classical_bins),
        SigmaMode::PerBitSpread => sample_std(&c_excess),
        SigmaMode::StandardError => sample_std(&c_excess) / (c_excess.len() as f64).sqrt(),
    };
    let gate = GateSummary {
        classical_mean_w: c_mean,
        classical_sigma_w: c_sigma,
        sigma_mode: opts.gate_sigma,
        k: opts.gate_sigmas,
        n_classical: c_excess.len(),
    };

    let q_excess: Vec<f64> = quantum_rows.iter().map(|r| r.excess_w).collect();
    if q_excess.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let excess_detected = compare_quantum_classical(mean(&q_excess), c_mean, c_sigma, opts.gate_sigmas)?;
    let report = if excess_detected {
        None
    } else {
        Some(LimitReport::build(
            &q_excess,
            opts.cl,
            opts.p_applied_w,
            opts.corrections,
            DatasetTag::Quantum,
            false,
        )?)
    };

    Ok(Analysis {
        blinded: ledger.blinded(),
        classical_rows,
        quantum_rows,
        diagnostics,
        gate,
        classical_report,
        quantum: QuantumOutcome {
            excess_detected,
            report,
        },
    })
}

pub const ANALYSIS_CSV_HEADER: &str = "id,source,p_s_w,sideband_mean_w,sideband_sigma_w,excess_w";

struct RowsFile<'a>(Vec<&'a SpectrumRow>);

impl Artifact for RowsFile<'_> {
    fn contents(&self) -> Vec<(Provenance, Quantity)> {
        self.0
            .iter()
            .flat_map(|r| {
                let p = if r.source.is_quantum() {
                    Provenance::Quantum
                } else {
                    Provenance::Classical
                };
                [
                    (p, Quantity::SignalPower),
                    (p, Quantity::SidebandStats),
                    (p, Quantity::Excess),
                ]
            })
            .collect()
    }

    fn render(&self) -> Result<String> {
        let mut s = String::from(ANALYSIS_CSV_HEADER);
        s.push('\n');
        for r in &self.0 {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e}\n",
                r.id, r.source, r.p_s_w, r.sideband_mean_w, r.sideband_sigma_w, r.excess_w
            ));
        }
        Ok(s)
    }
}

#[derive(Serialize)]
struct QuantumSection {
    excess_detected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    corrections: Option<Corrections>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_applied: Option<f64>,
    /// Full report, only for unblinded runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<LimitReport>,
}

#[derive(Serialize)]
struct ReportFile<'a> {
    blinded: bool,
    gate: &'a GateSummary,
    classical: &'a LimitReport,
    diagnostics: &'a [SpectrumDiagnostics],
    quantum: QuantumSection,
}

impl Artifact for ReportFile<'_> {
    fn contents(&self) -> Vec<(Provenance, Quantity)> {
        let q = Provenance::Quantum;
        let c = Provenance::Classical;
        let mut out = vec![
            (c, Quantity::AggregateMean),
            (c, Quantity::AggregateSpread),
            (c, Quantity::PowerLimit),
            (c, Quantity::FitParameters),
            (q, Quantity::ExcessDetected),
        ];
        if self.quantum.epsilon_limit.is_some() {
            out.push((q, Quantity::EpsilonLimit));
        }
        if self.quantum.report.is_some() {
            out.extend([(q, Quantity::PowerLimit), (q, Quantity::BitValue)]);
        }
        out
    }

    fn render(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Writes `analysis.csv` and `report.json`. With `dump_quantum` the quantum
/// rows are included in the CSV, which the sink refuses under blinding.
pub fn write_analysis(analysis: &Analysis, sink: &mut ArtifactSink, dump_quantum: bool) -> Result<()> {
    let mut rows: Vec<&SpectrumRow> = analysis.classical_rows.iter().collect();
    if dump_quantum {
        rows.extend(&analysis.quantum_rows);
        rows.sort_by_key(|r| r.id);
    }
    sink.emit("analysis.csv", &RowsFile(rows))?;

    let blind = sink.policy().enabled;
    let qr = analysis.quantum.report.as_ref();
    let quantum = QuantumSection {
        excess_detected: analysis.quantum.excess_detected,
        epsilon_limit: qr.map(|r| r.epsilon_limit),
        cl: qr.map(|r| r.cl),
        corrections: qr.map(|r| r.corrections),
        p_applied: qr.map(|r| r.p_applied),
        report: if blind { None } else { qr.cloned() },
    };
    sink.emit(
        "report.json",
        &ReportFile {
            blinded: blind,
            gate: &analysis.gate,
            classical: &analysis.classical_report,
            diagnostics: &analysis.diagnostics,
            quantum,
        },
    )?;
    Ok(())
}

/// Rows of a previously written `analysis.csv`.
pub fn read_analysis_csv(text: &str, path: &str) -> Result<Vec<SpectrumRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == ANALYSIS_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.into(),
                line: 1,
                msg: format!("expected header `{ANALYSIS_CSV_HEADER}`"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
        rows.push(SpectrumRow {
            id: f[0].trim().parse().map_err(|e| bad(format!("{}: {e}", f[0])))?,
            source: f[1].trim().parse().map_err(|e: Error| bad(e.to_string()))?,
            p_s_w: num(f[2])?,
            sideband_mean_w: num(f[3])?,
            sideband_sigma_w: num(f[4])?,
            excess_w: num(f[5])?,
        });
    }
    Ok(rows)
}
