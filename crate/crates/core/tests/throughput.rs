use std::thread::sleep;
use std::time::Duration;

use graspkp::decoder::DecodeConfig;
use graspkp::encoder::{ideal_bundle, EncoderConfig};
use graspkp::evaluator::{measure_fps, FpsConfig};
use graspkp::geometry::Grasp;
use graspkp::synthetic::{synthetic_set, SyntheticConfig};
use graspkp::{group, Profile};

#[test]
fn sleeping_pipeline_runs_at_ten_fps() {
    let cfg = FpsConfig {
        repetitions: 1,
        ..FpsConfig::default()
    };
    let report = measure_fps(|_: &u8| sleep(Duration::from_millis(100)), &[0], cfg).unwrap();
    assert!((report.fps - 10.0).abs() <= 1.0, "{report:?}");
}

#[test]
fn group_throughput_is_reported() {
    let profile = Profile::cornell();
    let enc = EncoderConfig::new(18, 4, 227, 227);
    let bundles: Vec<_> = (0..8u64)
        .map(|s| {
            let truth: Vec<Grasp<f64>> = synthetic_set(s, &enc, &SyntheticConfig::default());
            ideal_bundle(&truth, &enc, s).unwrap()
        })
        .collect();
    let report = measure_fps(
        |b| group::<f64>(b, &profile.thresholds, &DecodeConfig::default()),
        &bundles,
        FpsConfig::default(),
    )
    .unwrap();
    println!("group on 57x57x18 bundles: {:.1} fps", report.fps);
    assert!(report.fps.is_finite() && report.fps > 0.0);
}
