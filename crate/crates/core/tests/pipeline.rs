use netcp_core::stream_io::{read_truth, truth_sidecar_path, write_truth};
use netcp_core::{
    calibrate, generate_stream, generate_training, read_stream_file, run_offline, write_stream_file, Detector,
    Emission, GridMode, ScenarioSpec, Status,
};

fn spec() -> ScenarioSpec {
    let mut spec = ScenarioSpec::scenario1(0.9, 21);
    spec.n = 30;
    spec.total_t = 60;
    spec.delta = Some(30);
    spec
}

#[test]
fn file_round_trip_feeds_the_same_detection() {
    let spec = spec();
    let dir = tempfile::tempdir().unwrap();
    let training = generate_training(&spec, 40, 5).unwrap();
    let (profile, report) = calibrate(&training, 0.05, 20, 6, GridMode::Dyadic).unwrap();
    assert!(report.crossing_rate_at_chosen <= 0.05);

    let generated = generate_stream(&spec).unwrap();
    let path = dir.path().join("stream.csv");
    write_stream_file(&path, &generated.snapshots, spec.self_loops, Emission::Compact).unwrap();
    write_truth(&truth_sidecar_path(&path), &generated.truth).unwrap();
    let (_, parsed) = read_stream_file(&path).unwrap();
    assert_eq!(parsed, generated.snapshots);
    assert_eq!(read_truth(&truth_sidecar_path(&path)).unwrap(), generated.truth);

    let direct = run_offline(&generated.snapshots, &profile).unwrap();
    let from_file = run_offline(&parsed, &profile).unwrap();
    assert_eq!(direct, from_file);
}

#[test]
fn streaming_steps_reproduce_the_offline_run() {
    let spec = spec();
    let training = generate_training(&spec, 40, 5).unwrap();
    let (profile, _) = calibrate(&training, 0.05, 20, 6, GridMode::Dyadic).unwrap();
    let stream = generate_stream(&spec).unwrap().snapshots;
    let offline = run_offline(&stream, &profile).unwrap();

    let mut detector = Detector::new(profile).unwrap();
    for (outcome, snap) in offline.trace.iter().zip(&stream) {
        assert_eq!(&detector.step(snap.clone()).unwrap(), outcome);
    }
    match (detector.status(), offline.alarm) {
        (Status::Alarmed(a), Some(b)) => assert_eq!(a, b),
        (Status::Monitoring, None) => {}
        other => panic!("status and offline run disagree: {other:?}"),
    }
}

#[test]
fn a_large_change_is_caught_after_it_happens() {
    let spec = spec();
    let training = generate_training(&spec, 60, 8).unwrap();
    let (profile, _) = calibrate(&training, 0.05, 30, 9, GridMode::Dyadic).unwrap();
    let truth = generate_stream(&spec).unwrap().truth;
    assert!(truth.kappa > 0.0);
    let mut caught = 0;
    for seed in 0..5 {
        let stream = netcp_core::generate_stream_with(&spec, 100 + seed).unwrap().snapshots;
        if let Some(t) = run_offline(&stream, &profile).unwrap().alarm_time() {
            if t > 30 {
                caught += 1;
            }
        }
    }
    assert!(caught >= 3, "only {caught} of 5 streams alarmed after the change");
}

#[test]
fn profile_estimates_on_the_block_model() {
    let spec = ScenarioSpec::scenario1(0.9, 1);
    let mut ranks = Vec::new();
    for seed in 0..20 {
        let training = generate_training(&spec, 200, 300 + seed).unwrap();
        let profile = netcp_core::estimate_profile(&training, 0.05).unwrap();
        assert!((0.35..=0.65).contains(&profile.rho), "rho {}", profile.rho);
        assert!((0.85..=0.95).contains(&profile.p) && (0.85..=0.95).contains(&profile.m));
        ranks.push(profile.r);
    }
    // The penalty sits below the noise edge of a 200-step window, so noise
    // directions survive the shrinkage and the numerical rank exceeds the
    // three blocks.
    assert!(ranks.iter().all(|r| *r >= 3), "{ranks:?}");
}
