//! Built-in consistency checks: finite-difference validation of every loss
//! at seeded random points, and the ideal-bundle encode/decode/group round
//! trip on synthetic annotation sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decoder::DecodeConfig;
use crate::encoder::{ideal_bundle, EncoderConfig};
use crate::geometry::{angle_distance, rotated_iou, Grasp};
use crate::grouper::group;
use crate::losses::{
    detection_loss, flat_pair_loss, gradient_check, offset_loss, pull_loss, push_loss, total_loss, FocalParams,
    LossComponents, LossError, LossWeights,
};
use crate::profile::Profile;
use crate::synthetic::{synthetic_set, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Detection,
    Offset,
    Pull,
    Push,
    Total,
}

impl LossName {
    pub const ALL: [LossName; 5] = [Self::Detection, Self::Offset, Self::Pull, Self::Push, Self::Total];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub points: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            points: 100,
            step: 1e-6,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckSummary {
    pub loss: LossName,
    pub points: usize,
    pub failed_points: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

/// Keeps sampled values at least `gap` away from every kink in `kinks`.
fn away_from(v: f64, kinks: &[f64], gap: f64) -> bool {
    kinks.iter().all(|k| (v.abs() - k).abs() >= gap)
}

type Objective = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>;

/// A random smooth point and the objective to differentiate there.
fn sample(loss: LossName, rng: &mut ChaCha8Rng, step: f64) -> (Objective, Vec<f64>) {
    let gap = 10.0 * step;
    match loss {
        LossName::Detection => {
            let (pred, truth, n) = detection_instance(rng, 32);
            let f = move |x: &[f64]| detection_loss(x, &truth, n, FocalParams::default()).expect("lengths agree");
            (Box::new(f), pred)
        }
        LossName::Offset => {
            let (pred, truth) = offset_instance(rng, gap);
            let f = move |x: &[f64]| {
                let p: Vec<[f64; 2]> = x.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
                let (v, g) = offset_loss(&p, &truth).expect("lengths agree");
                (v, g.into_iter().flatten().collect())
            };
            (Box::new(f), pred)
        }
        LossName::Pull => {
            let n = rng.gen_range(1..=8);
            let x = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            (Box::new(flat_pair_loss(pull_loss::<f64>)), x)
        }
        LossName::Push => (Box::new(flat_pair_loss(push_loss::<f64>)), push_instance(rng, gap)),
        LossName::Total => total_instance(rng, gap),
    }
}

fn detection_instance(rng: &mut ChaCha8Rng, len: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let pred = (0..len).map(|_| rng.gen_range(0.01..0.99)).collect();
    let truth: Vec<f64> = (0..len)
        .map(|_| if rng.gen_bool(0.15) { 1.0 } else { rng.gen_range(0.0..1.0) })
        .collect();
    let n = truth.iter().filter(|&&y| y == 1.0).count();
    (pred, truth, n)
}

fn offset_instance(rng: &mut ChaCha8Rng, gap: f64) -> (Vec<f64>, Vec<[f64; 2]>) {
    let k = rng.gen_range(1..=6);
    let mut pred = Vec::with_capacity(2 * k);
    let mut truth = Vec::with_capacity(k);
    for _ in 0..k {
        let t = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        for c in t {
            let d = loop {
                let d: f64 = rng.gen_range(-3.0..3.0);
                if away_from(d, &[1.0], gap) {
                    break d;
                }
            };
            pred.push(c + d);
        }
        truth.push(t);
    }
    (pred, truth)
}

fn push_instance(rng: &mut ChaCha8Rng, gap: f64) -> Vec<f64> {
    loop {
        let n = rng.gen_range(2..=8);
        let x: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let means: Vec<f64> = x.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        // the step moves a mean by half of it
        let smooth = means
            .iter()
            .enumerate()
            .all(|(i, a)| means[..i].iter().all(|b| away_from(a - b, &[0.0, 1.0], gap)));
        if smooth {
            return x;
        }
    }
}

fn total_instance(rng: &mut ChaCha8Rng, gap: f64) -> (Objective, Vec<f64>) {
    let (kp_pred, kp_truth, n) = detection_instance(rng, 32);
    let (cen_pred, cen_truth, _) = detection_instance(rng, 16);
    let emb = push_instance(rng, gap);
    let (off_pred, off_truth) = offset_instance(rng, gap);
    let w = LossWeights {
        pull: rng.gen_range(0.5..2.0),
        push: rng.gen_range(0.5..2.0),
        offset: rng.gen_range(0.5..2.0),
    };
    let sizes = [kp_pred.len(), cen_pred.len(), emb.len(), off_pred.len()];
    let point: Vec<f64> = [kp_pred, cen_pred, emb, off_pred].concat();
    let f = move |x: &[f64]| {
        let (kp, rest) = x.split_at(sizes[0]);
        let (cen, rest) = rest.split_at(sizes[1]);
        let (emb, off) = rest.split_at(sizes[2]);
        let fp = FocalParams::default();
        let (l_kp, g_kp) = detection_loss(kp, &kp_truth, n, fp).expect("lengths agree");
        let (l_cen, g_cen) = detection_loss(cen, &cen_truth, n, fp).expect("lengths agree");
        let (l_pull, g_pull) = flat_pair_loss(pull_loss::<f64>)(emb);
        let (l_push, g_push) = flat_pair_loss(push_loss::<f64>)(emb);
        let off_p: Vec<[f64; 2]> = off.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let (l_off, g_off) = offset_loss(&off_p, &off_truth).expect("lengths agree");
        let value = total_loss(
            &LossComponents {
                keypoint_detection: l_kp,
                center_detection: l_cen,
                pull: l_pull,
                push: l_push,
                offset: l_off,
            },
            &w,
        );
        let mut grad = g_kp;
        grad.extend(g_cen);
        grad.extend(g_pull.iter().zip(&g_push).map(|(a, b)| w.pull * a + w.push * b));
        grad.extend(g_off.into_iter().flatten().map(|g| w.offset * g));
        (value, grad)
    };
    (Box::new(f), point)
}

/// Checks one loss at `config.points` seeded random smooth points.
pub fn check_loss(loss: LossName, config: &GradCheckConfig) -> Result<LossCheckSummary, LossError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (loss as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut summary = LossCheckSummary {
        loss,
        points: config.points,
        failed_points: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        passed: true,
    };
    for _ in 0..config.points {
        let (f, x) = sample(loss, &mut rng, config.step);
        let report = gradient_check(f, &x, config.step, config.tolerance)?;
        summary.max_rel_error = summary.max_rel_error.max(report.max_rel_error);
        summary.max_abs_error = summary.max_abs_error.max(report.max_abs_error);
        if !report.passed {
            summary.failed_points += 1;
            summary.passed = false;
        }
    }
    Ok(summary)
}

pub fn check_all_losses(config: &GradCheckConfig) -> Result<Vec<LossCheckSummary>, LossError> {
    LossName::ALL.iter().map(|&l| check_loss(l, config)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTripSummary {
    pub profile: String,
    pub sets: usize,
    pub grasps: usize,
    pub recovered: usize,
    pub min_iou: f64,
    pub max_angle_error: f64,
    pub passed: bool,
}

/// Acceptance bounds for a recovered grasp.
pub const ROUND_TRIP_MIN_IOU: f64 = 0.9;

/// Encodes `sets` synthetic annotation sets as ideal bundles, groups them
/// and counts annotations matched by some output grasp with IoU above 0.9
/// and angle error below half a class bin.
pub fn round_trip(profile: &Profile<f64>, image: (usize, usize), sets: usize, seed: u64) -> RoundTripSummary {
    let enc = EncoderConfig::new(profile.num_classes, profile.downsample_ratio, image.0, image.1);
    let max_angle = std::f64::consts::PI / (2.0 * profile.num_classes as f64);
    let mut out = RoundTripSummary {
        profile: profile.name.to_string(),
        sets,
        grasps: 0,
        recovered: 0,
        min_iou: 1.0,
        max_angle_error: 0.0,
        passed: true,
    };
    for i in 0..sets as u64 {
        let s = seed.wrapping_add(i);
        let truth: Vec<Grasp<f64>> = synthetic_set(s, &enc, &SyntheticConfig::default());
        out.grasps += truth.len();
        let Ok(bundle) = ideal_bundle(&truth, &enc, s) else {
            out.passed = false;
            continue;
        };
        let found = group::<f64>(&bundle, &profile.thresholds, &DecodeConfig::default());
        for t in &truth {
            let best = found
                .iter()
                .map(|r| {
                    let iou = rotated_iou(&r.grasp.rect(profile.eval_height), &t.rect(profile.eval_height));
                    (iou, angle_distance(r.grasp.theta, t.theta))
                })
                .max_by(|a, b| a.0.total_cmp(&b.0));
            match best {
                Some((iou, angle)) if iou > ROUND_TRIP_MIN_IOU && angle < max_angle => {
                    out.recovered += 1;
                    out.min_iou = out.min_iou.min(iou);
                    out.max_angle_error = out.max_angle_error.max(angle);
                }
                _ => out.passed = false,
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_small_run() {
        let cfg = GradCheckConfig { points: 10, ..GradCheckConfig::default() };
        for s in check_all_losses(&cfg).unwrap() {
            assert!(s.passed, "{s:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [0.3, 0.7];
        let bad = |v: &[f64]| (v[0] * v[0] + v[1], vec![v[0], 1.0]);
        assert!(!gradient_check(bad, &x, 1e-6, 1e-4).unwrap().passed);
    }

    #[test]
    fn round_trip_small() {
        let s = round_trip(&Profile::cornell(), (227, 227), 10, 1);
        assert!(s.passed, "{s:?}");
        assert_eq!(s.recovered, s.grasps);
    }
}
