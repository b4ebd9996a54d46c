use std::fs;

use nlqm::bitgen::SampleSpec;
use nlqm::calibration::{calibrate_with_policies, forward_measurements, PolicyPlan};
use nlqm::rfchain::ChainConfig;
use nlqm::runner::{
    analyze, load_run, persist_run, run_experiment, write_analysis, Action, AnalysisOptions, ArtifactSink,
    BlindingPolicy, TimingProfile,
};

fn spec(seed: u64) -> SampleSpec {
    SampleSpec {
        seed,
        ..SampleSpec::default()
    }
}

#[test]
fn identical_inputs_give_identical_run_directories() {
    let cfg = ChainConfig::default();
    let dirs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let mut ledger = run_experiment(
                &cfg,
                &spec(21).build().unwrap(),
                &TimingProfile::default(),
                3e-13,
                77,
                &BlindingPolicy::open(),
            )
            .unwrap();
            ledger.manifest.sample_spec = Some(spec(21));
            let mut sink = ArtifactSink::new(dir.path(), BlindingPolicy::open()).unwrap();
            persist_run(&ledger, &mut sink).unwrap();
            dir
        })
        .collect();
    let mut names: Vec<_> = fs::read_dir(dirs[0].path().join("spectra"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 66);
    for n in &names {
        let rel = std::path::Path::new("spectra").join(n);
        assert_eq!(
            fs::read(dirs[0].path().join(&rel)).unwrap(),
            fs::read(dirs[1].path().join(&rel)).unwrap()
        );
    }
    for n in ["ledger.jsonl", "run.json"] {
        assert_eq!(
            fs::read(dirs[0].path().join(n)).unwrap(),
            fs::read(dirs[1].path().join(n)).unwrap()
        );
    }
}

#[test]
fn both_branches_take_the_same_time() {
    let ledger = run_experiment(
        &ChainConfig::default(),
        &spec(3).build().unwrap(),
        &TimingProfile::default(),
        0.0,
        1,
        &BlindingPolicy::open(),
    )
    .unwrap();
    let durations: Vec<f64> = ledger.entries.iter().map(|e| e.end_s - e.start_s).collect();
    assert!(durations.windows(2).all(|w| w[0] == w[1]));
    for e in &ledger.entries {
        let actions = e.actions.as_ref().unwrap();
        let measuring = actions.iter().any(|a| a.action == Action::AcquireSpectrum);
        assert_eq!(measuring, e.value == Some(0));
        assert_eq!(actions.first().unwrap().start_s, e.start_s);
        assert_eq!(actions.last().unwrap().end_s, e.end_s);
    }
}

#[test]
fn blinded_run_reloads_and_reaches_the_same_verdict() {
    let cfg = ChainConfig::default();
    let (th, gm) = forward_measurements(&cfg, cfg.rbw_cal_hz);
    let sol = calibrate_with_policies(&cfg, &th, &gm, &PolicyPlan::default()).unwrap();
    let eps = nlqm::rfchain::epsilon_for_center_excess(&cfg, 10.0);

    let dir = tempfile::tempdir().unwrap();
    let mut ledger = run_experiment(
        &cfg,
        &spec(8).build().unwrap(),
        &TimingProfile::default(),
        eps,
        5,
        &BlindingPolicy::blind(),
    )
    .unwrap();
    ledger.manifest.sample_spec = Some(spec(8));
    let opts = AnalysisOptions::for_run(&ledger).unwrap();
    let in_memory = analyze(&ledger, &sol, &opts).unwrap();

    let mut sink = ArtifactSink::new(dir.path(), BlindingPolicy::blind()).unwrap();
    persist_run(&ledger, &mut sink).unwrap();
    let reloaded = load_run(dir.path()).unwrap();
    let again = analyze(&reloaded, &sol, &opts).unwrap();
    assert!(in_memory.quantum.excess_detected);
    assert_eq!(again.quantum.excess_detected, in_memory.quantum.excess_detected);
    assert_eq!(again.classical_rows.len(), in_memory.classical_rows.len());
    for (a, b) in again.classical_rows.iter().zip(&in_memory.classical_rows) {
        assert!((a.excess_w - b.excess_w).abs() < 1e-12 * a.sideband_mean_w);
    }

    write_analysis(&again, &mut sink, false).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["quantum"]["excess_detected"], true);
    assert!(report["quantum"].get("epsilon_limit").is_none());
}

#[test]
fn tampered_source_sequence_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = run_experiment(
        &ChainConfig::default(),
        &spec(2).build().unwrap(),
        &TimingProfile::default(),
        0.0,
        4,
        &BlindingPolicy::blind(),
    )
    .unwrap();
    ledger.manifest.sample_spec = Some(spec(3));
    let mut sink = ArtifactSink::new(dir.path(), BlindingPolicy::blind()).unwrap();
    persist_run(&ledger, &mut sink).unwrap();
    assert!(matches!(load_run(dir.path()), Err(nlqm::Error::IncompleteRun(_))));
}
