use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nlqm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nlqm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nlqm(dir, args);
    assert!(
        out.status.success(),
        "nlqm {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn open_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("fid.cfg"), "qubit_b.f_readout=0.9\n").unwrap();
    fs::write(dir.join("run.cfg"), "t_dewar_k=1.921\ntiming.bit0.acquire_spectrum_s=10\ntiming.bit1.dwell_s=9.5\n").unwrap();
    ok(dir, &["generate-bits", "--seed", "4", "--fidelity-file", "fid.cfg", "--out", "bits.csv"]);
    let bits = fs::read_to_string(dir.join("bits.csv")).unwrap();
    assert!(bits.starts_with("id,source,value\n"));
    assert!(bits.lines().skip(1).all(|l| !l.ends_with(',')));

    ok(dir, &["simulate-run", "--config", "run.cfg", "--bits", "bits.csv", "--seed", "1", "--out", "run"]);
    let n_spectra = fs::read_dir(dir.join("run/spectra")).unwrap().count();
    assert_eq!(n_spectra, 2 * 66);
    let first = fs::read_to_string(dir.join("run/ledger.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(entry["end_s"], 12.5);

    ok(dir, &["calibrate", "--out", "cal.cfg"]);
    ok(dir, &["analyze", "--run", "run", "--cal", "cal.cfg", "--dump-quantum"]);
    let csv = fs::read_to_string(dir.join("run/analysis.csv")).unwrap();
    assert!(csv.lines().any(|l| l.contains(",qubit_b,")));

    let json = ok(
        dir,
        &["limit", "--analysis", "run/analysis.csv", "--cl", "0.90", "--pa-watts", "7.45", "--fc", "0.861", "--fh", "0.99", "--bandwidth-fraction", "0.856"],
    );
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["dataset_tag"], "classical");
    assert!(report["p_m"].as_f64().unwrap() > 0.0);
    assert!(report["epsilon_limit"].as_f64().unwrap() > 0.0);
    assert!((report["corrections"]["f_hadamard"].as_f64().unwrap() - 1.25).abs() < 1e-12);
}

#[test]
fn withheld_bits_force_blinding() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate-bits", "--seed", "9", "--out", "bits.csv", "--blind"]);
    ok(dir, &["simulate-run", "--bits", "bits.csv", "--seed", "2", "--out", "run"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/run.json")).unwrap()).unwrap();
    assert_eq!(manifest["blinded"], true);
    ok(dir, &["calibrate", "--out", "cal.cfg"]);
    let out = nlqm(dir, &["analyze", "--run", "run", "--cal", "cal.cfg", "--dump-quantum"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("blinding violation"));
}

#[test]
fn bits_without_provenance_cannot_be_regenerated() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate-bits", "--seed", "9", "--out", "bits.csv", "--blind"]);
    fs::remove_file(dir.join("bits.csv.meta")).unwrap();
    let out = nlqm(dir, &["simulate-run", "--bits", "bits.csv", "--out", "run"]);
    assert!(!out.status.success());
}

#[test]
fn unbalanced_timing_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("run.cfg"), "timing.bit1.dwell_s=1000\n").unwrap();
    ok(dir, &["generate-bits", "--out", "bits.csv"]);
    let out = nlqm(dir, &["simulate-run", "--config", "run.cfg", "--bits", "bits.csv", "--out", "run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("synchron"));
    assert!(!dir.join("run").exists());
}
