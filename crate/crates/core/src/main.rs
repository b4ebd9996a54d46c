#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use nlqm::bitgen::{bits_csv, read_bits_csv, read_fidelities, tally, BitRecord, MixedSample, SampleSpec};
use nlqm::calibration::{
    applied_power_w, calibrate_with_policies, forward_measurements, CalibrationSolution, GeneratorMeasurement,
    PolicyPlan, ThermalMeasurement,
};
use nlqm::kv::KeyValues;
use nlqm::limits::{Corrections, DatasetTag, LimitReport, SigmaMode};
use nlqm::rfchain::ChainConfig;
use nlqm::runner::analysis::read_analysis_csv;
use nlqm::runner::{
    analyze, load_run, persist_run, run_experiment, write_analysis, AnalysisOptions, ArtifactSink, BlindingPolicy,
    TimingProfile,
};
use nlqm::units::dbm_to_watts;

#[derive(Parser)]
#[command(name = "nlqm", version, about = "Simulate and analyze an RF nonlinear quantum mechanics test")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mixed classical/quantum bit sample.
    GenerateBits {
        #[arg(long, default_value_t = 25)]
        n_classical: usize,
        #[arg(long, default_value_t = 21)]
        n_qubit_a: usize,
        #[arg(long, default_value_t = 20)]
        n_qubit_b: usize,
        /// key=value file with qubit_a.f_readout etc.
        #[arg(long)]
        fidelity_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Withhold quantum bit values from the CSV.
        #[arg(long)]
        blind: bool,
    },
    /// Run the per-bit experiment loop and write a run directory.
    SimulateRun {
        /// Chain config and timing, key=value. Missing keys keep defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bits: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        blind: bool,
    },
    /// Solve HEMT gain and noise temperature and write a calibration file.
    Calibrate {
        /// Thermal reading at the SA over the calibration RBW, dBm.
        #[arg(long, allow_hyphen_values = true)]
        thermal: Option<f64>,
        /// Generator tone reading at the SA, dBm.
        #[arg(long, allow_hyphen_values = true)]
        gen: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Apply the cable policy to the generator → HEMT loss.
        #[arg(long)]
        adjust_pre_hemt: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a run directory: classical diagnostics, 5σ gate, limits.
    Analyze {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        cal: PathBuf,
        #[arg(long)]
        blind: bool,
        #[arg(long, default_value_t = 0.9)]
        cl: f64,
        #[arg(long, value_enum, default_value_t = GateSigma::Pooled)]
        gate_sigma: GateSigma,
        /// Include quantum rows in analysis.csv (refused under blinding).
        #[arg(long)]
        dump_quantum: bool,
    },
    /// Set a power and ε limit from analysis rows.
    Limit {
        #[arg(long)]
        analysis: PathBuf,
        #[arg(long)]
        cal: Option<PathBuf>,
        #[arg(long, default_value_t = 0.9)]
        cl: f64,
        #[arg(long, default_value_t = 7.45)]
        pa_watts: f64,
        /// HP amplifier drive, dBm; with --cal, P_A is derived from the calibration instead.
        #[arg(long, allow_hyphen_values = true)]
        drive_dbm: Option<f64>,
        #[arg(long, default_value_t = 0.861)]
        fc: f64,
        #[arg(long, default_value_t = 0.99)]
        fh: f64,
        #[arg(long, default_value_t = 0.856)]
        bandwidth_fraction: f64,
        #[arg(long, value_enum, default_value_t = Dataset::Classical)]
        dataset: Dataset,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GateSigma {
    Pooled,
    PerBit,
    Sem,
}

impl From<GateSigma> for SigmaMode {
    fn from(g: GateSigma) -> Self {
        match g {
            GateSigma::Pooled => SigmaMode::PooledBinSpread,
            GateSigma::PerBit => SigmaMode::PerBitSpread,
            GateSigma::Sem => SigmaMode::StandardError,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    Classical,
    Quantum,
}

fn meta_path(bits: &Path) -> PathBuf {
    let mut s = bits.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn read_kv_or_default(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => KeyValues::read(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(KeyValues::parse("", "<defaults>")?),
    }
}

fn generate_bits(spec: SampleSpec, out: &Path, blind: bool) -> Result<()> {
    let sample = spec.build()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, bits_csv(&sample, blind))?;
    fs::write(meta_path(out), spec.to_kv())?;
    for (source, t) in &sample.counts {
        if blind && source.is_quantum() {
            println!("{source}: {} bits", t.total());
        } else {
            println!("{source}: {} bits ({} zeros, {} ones)", t.total(), t.zeros, t.ones);
        }
    }
    Ok(())
}

/// Reconstructs the sample behind `bits.csv`, regenerating withheld values
/// from the provenance sidecar when present.
fn load_sample(bits: &Path) -> Result<(MixedSample, Option<SampleSpec>, bool)> {
    let rows = read_bits_csv(bits)?;
    let withheld = rows.iter().any(|r| r.value.is_none());
    let meta = meta_path(bits);
    if meta.exists() {
        let spec = SampleSpec::from_kv(&KeyValues::read(&meta)?)?;
        let sample = spec.build()?;
        let consistent = sample.len() == rows.len()
            && sample
                .bits
                .iter()
                .zip(&rows)
                .all(|(b, r)| b.id == r.id && b.source == r.source && r.value.is_none_or(|v| v == b.value));
        if !consistent {
            bail!("{} does not match its provenance file {}", bits.display(), meta.display());
        }
        return Ok((sample, Some(spec), withheld));
    }
    if withheld {
        bail!(
            "{} withholds quantum values and has no provenance file {}",
            bits.display(),
            meta.display()
        );
    }
    let records = rows
        .iter()
        .map(|r| BitRecord {
            id: r.id,
            source: r.source,
            value: r.value.unwrap_or_default(),
        })
        .collect::<Vec<_>>();
    Ok((
        MixedSample {
            counts: tally(&records),
            bits: records,
            provenance_seed: 0,
        },
        None,
        false,
    ))
}

fn simulate(config: Option<&Path>, bits: &Path, epsilon: f64, seed: u64, out: &Path, blind: bool) -> Result<()> {
    let kv = read_kv_or_default(config)?;
    let cfg = ChainConfig::from_kv(&kv)?;
    let timing = TimingProfile::from_kv(&kv)?;
    let (sample, spec, withheld) = load_sample(bits)?;
    let policy = BlindingPolicy::new(blind || withheld);
    let mut ledger = run_experiment(&cfg, &sample, &timing, epsilon, seed, &policy)?;
    ledger.manifest.sample_spec = spec;
    let mut sink = ArtifactSink::new(out, policy.clone())?;
    persist_run(&ledger, &mut sink)?;
    println!(
        "wrote {} bits to {} ({} files, blinding {})",
        ledger.entries.len(),
        out.display(),
        sink.written().len(),
        if policy.enabled { "on" } else { "off" }
    );
    Ok(())
}

fn calibrate(thermal: Option<f64>, gen: Option<f64>, config: Option<&Path>, adjust_pre_hemt: bool, out: &Path) -> Result<()> {
    let cfg = ChainConfig::from_kv(&read_kv_or_default(config)?)?;
    let (mut th, mut gm) = forward_measurements(&cfg, cfg.rbw_cal_hz);
    if let Some(dbm) = thermal {
        th = ThermalMeasurement {
            power_sa_w: dbm_to_watts(dbm),
            ..th
        };
    }
    if let Some(dbm) = gen {
        gm = GeneratorMeasurement {
            power_sa_w: dbm_to_watts(dbm),
            ..gm
        };
    }
    let plan = PolicyPlan {
        adjust_pre_hemt,
        ..PolicyPlan::default()
    };
    let sol = calibrate_with_policies(&cfg, &th, &gm, &plan)?;
    fs::write(out, sol.to_kv())?;
    println!(
        "g_hemt_db={:.3} t_hemt_noise_k={:.3} -> {}",
        sol.g_hemt_db,
        sol.t_hemt_noise_k,
        out.display()
    );
    Ok(())
}

fn run_analysis(run: &Path, cal: &Path, blind: bool, cl: f64, gate_sigma: GateSigma, dump_quantum: bool) -> Result<()> {
    let ledger = load_run(run)?;
    let sol = CalibrationSolution::read(cal)?;
    let policy = BlindingPolicy::new(blind || ledger.blinded());
    let opts = AnalysisOptions {
        cl,
        gate_sigma: gate_sigma.into(),
        ..AnalysisOptions::for_run(&ledger)?
    };
    let analysis = analyze(&ledger, &sol, &opts)?;
    let mut sink = ArtifactSink::new(run, policy)?;
    write_analysis(&analysis, &mut sink, dump_quantum)?;
    let c = &analysis.classical_report;
    println!(
        "classical: {} bits, P_M = {:.3e} W, epsilon < {:.3e} at {:.0}% CL",
        c.n_bits,
        c.p_m,
        c.epsilon_limit,
        100.0 * c.cl
    );
    println!("quantum: excess_detected = {}", analysis.quantum.excess_detected);
    if let Some(q) = &analysis.quantum.report {
        println!("quantum: epsilon < {:.3e} at {:.0}% CL", q.epsilon_limit, 100.0 * q.cl);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn limit(
    analysis: &Path,
    cal: Option<&Path>,
    cl: f64,
    pa_watts: f64,
    drive_dbm: Option<f64>,
    corrections: Corrections,
    dataset: Dataset,
    out: Option<&Path>,
) -> Result<()> {
    let text = fs::read_to_string(analysis).with_context(|| format!("reading {}", analysis.display()))?;
    let rows = read_analysis_csv(&text, &analysis.display().to_string())?;
    let (tag, quantum) = match dataset {
        Dataset::Classical => (DatasetTag::Classical, false),
        Dataset::Quantum => (DatasetTag::Quantum, true),
    };
    let excesses: Vec<f64> = rows
        .iter()
        .filter(|r| r.source.is_quantum() == quantum)
        .map(|r| r.excess_w)
        .collect();
    let mut p_applied = pa_watts;
    if let Some(path) = cal {
        let sol = CalibrationSolution::read(path)?;
        if let (Some(drive), Some(g)) = (drive_dbm, sol.effective_g_hp_db) {
            let il = sol.effective_il_factors.get("hp_path").copied().unwrap_or(1.0);
            p_applied = applied_power_w(drive, g, il);
        }
    }
    let report = LimitReport::build(&excesses, cl, p_applied, corrections, tag, false)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = out {
        fs::write(path, json.clone() + "\n")?;
    }
    println!("{json}");
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateBits {
            n_classical,
            n_qubit_a,
            n_qubit_b,
            fidelity_file,
            seed,
            out,
            blind,
        } => {
            let (fidelity_a, fidelity_b) = read_fidelities(&read_kv_or_default(fidelity_file.as_deref())?)?;
            let spec = SampleSpec {
                n_classical,
                n_qubit_a,
                n_qubit_b,
                fidelity_a,
                fidelity_b,
                seed,
            };
            generate_bits(spec, &out, blind)
        }
        Command::SimulateRun {
            config,
            bits,
            epsilon,
            seed,
            out,
            blind,
        } => simulate(config.as_deref(), &bits, epsilon, seed, &out, blind),
        Command::Calibrate {
            thermal,
            gen,
            config,
            adjust_pre_hemt,
            out,
        } => calibrate(thermal, gen, config.as_deref(), adjust_pre_hemt, &out),
        Command::Analyze {
            run,
            cal,
            blind,
            cl,
            gate_sigma,
            dump_quantum,
        } => run_analysis(&run, &cal, blind, cl, gate_sigma, dump_quantum),
        Command::Limit {
            analysis,
            cal,
            cl,
            pa_watts,
            drive_dbm,
            fc,
            fh,
            bandwidth_fraction,
            dataset,
            out,
        } => limit(
            &analysis,
            cal.as_deref(),
            cl,
            pa_watts,
            drive_dbm,
            Corrections::from_fidelities(bandwidth_fraction, fc, fh)?,
            dataset,
            out.as_deref(),
        ),
    }
}
