//! Rectangle-metric grasp evaluation and throughput measurement.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{angle_distance, rotated_iou, Grasp};
use crate::profile::Profile;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("criteria out of range: {0}")]
    Criteria(String),
    #[error(
        "image ids do not pair up: no truth for {missing_truth:?}, no predictions for {missing_prediction:?}"
    )]
    Pairing {
        missing_truth: Vec<String>,
        missing_prediction: Vec<String>,
    },
    #[error("no images to evaluate")]
    NoImages,
    #[error("timing needs at least {min_warmup} warm-up and {min_timed} timed runs over a nonempty input set")]
    Timing { min_warmup: usize, min_timed: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchCriteria<T> {
    pub max_angle_diff: T,
    pub min_jaccard: T,
    /// Rectangle height used when a grasp carries none.
    pub eval_height: T,
}

impl<T: Scalar> MatchCriteria<T> {
    pub fn new(max_angle_diff: T, min_jaccard: T, eval_height: T) -> Result<Self, EvalError> {
        if !(max_angle_diff > T::zero() && max_angle_diff <= T::FRAC_PI_2()) {
            return Err(EvalError::Criteria(format!("max angle difference {max_angle_diff}")));
        }
        if !(min_jaccard > T::zero() && min_jaccard < T::one()) {
            return Err(EvalError::Criteria(format!("min Jaccard {min_jaccard}")));
        }
        if !(eval_height > T::zero() && eval_height.is_finite()) {
            return Err(EvalError::Criteria(format!("evaluation height {eval_height}")));
        }
        Ok(Self { max_angle_diff, min_jaccard, eval_height })
    }

    /// 30 degrees and Jaccard 0.25 with the profile's evaluation height.
    pub fn for_profile(profile: &Profile<T>) -> Self {
        Self {
            max_angle_diff: T::PI() / T::lit(6.0),
            min_jaccard: T::lit(0.25),
            eval_height: profile.eval_height,
        }
    }
}

/// Jaccard index and wrapped angle difference between a prediction and a
/// ground-truth grasp.
pub fn match_measures<T: Scalar>(pred: &Grasp<T>, truth: &Grasp<T>, criteria: &MatchCriteria<T>) -> (T, T) {
    let a = pred.rect(criteria.eval_height);
    let b = truth.rect(criteria.eval_height);
    (rotated_iou(&a, &b), angle_distance(pred.theta, truth.theta))
}

/// Angle within `max_angle_diff` (inclusive) and Jaccard strictly above
/// `min_jaccard`.
pub fn is_match<T: Scalar>(pred: &Grasp<T>, truth: &Grasp<T>, criteria: &MatchCriteria<T>) -> bool {
    let (iou, angle) = match_measures(pred, truth, criteria);
    angle <= criteria.max_angle_diff && iou > criteria.min_jaccard
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Top1,
    /// Correct when any of the first `n` predictions matches.
    TopN(usize),
}

impl Policy {
    fn considered(self) -> usize {
        match self {
            Policy::Top1 => 1,
            Policy::TopN(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageResult {
    pub image_id: String,
    pub matched: bool,
    /// Best Jaccard over considered predictions and all truths; 0 when
    /// there are no predictions.
    pub best_jaccard: f64,
    /// Smallest wrapped angle difference in radians, if any pair exists.
    pub best_angle_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub per_image: Vec<ImageResult>,
    pub fps: Option<f64>,
}

fn evaluate_image<T: Scalar>(
    id: &str,
    preds: &[Grasp<T>],
    truths: &[Grasp<T>],
    criteria: &MatchCriteria<T>,
    policy: Policy,
) -> ImageResult {
    let mut matched = false;
    let mut best_jaccard = 0.0f64;
    let mut best_angle: Option<f64> = None;
    for p in preds.iter().take(policy.considered()) {
        for t in truths {
            let (iou, angle) = match_measures(p, t, criteria);
            matched |= angle <= criteria.max_angle_diff && iou > criteria.min_jaccard;
            best_jaccard = best_jaccard.max(iou.as_f64());
            let a = angle.as_f64();
            best_angle = Some(best_angle.map_or(a, |b| b.min(a)));
        }
    }
    ImageResult {
        image_id: id.to_string(),
        matched,
        best_jaccard,
        best_angle_diff: best_angle,
    }
}

/// Accuracy over images keyed by id. Prediction lists are in rank order.
pub fn evaluate_dataset<T: Scalar>(
    predictions: &BTreeMap<String, Vec<Grasp<T>>>,
    truths: &BTreeMap<String, Vec<Grasp<T>>>,
    criteria: &MatchCriteria<T>,
    policy: Policy,
) -> Result<EvalReport, EvalError> {
    let missing_truth: Vec<String> = predictions.keys().filter(|k| !truths.contains_key(*k)).cloned().collect();
    let missing_prediction: Vec<String> = truths.keys().filter(|k| !predictions.contains_key(*k)).cloned().collect();
    if !missing_truth.is_empty() || !missing_prediction.is_empty() {
        return Err(EvalError::Pairing { missing_truth, missing_prediction });
    }
    if truths.is_empty() {
        return Err(EvalError::NoImages);
    }
    let per_image: Vec<ImageResult> = truths
        .iter()
        .map(|(id, t)| evaluate_image(id, &predictions[id], t, criteria, policy))
        .collect();
    let total = per_image.len();
    let correct = per_image.iter().filter(|r| r.matched).count();
    Ok(EvalReport {
        total,
        correct,
        accuracy: correct as f64 / total as f64,
        per_image,
        fps: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FpsConfig {
    pub warmup: usize,
    pub timed: usize,
    pub repetitions: usize,
}

impl FpsConfig {
    pub const MIN_WARMUP: usize = 5;
    pub const MIN_TIMED: usize = 50;
}

impl Default for FpsConfig {
    fn default() -> Self {
        Self {
            warmup: Self::MIN_WARMUP,
            timed: Self::MIN_TIMED,
            repetitions: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FpsReport {
    /// Median over repetitions.
    pub fps: f64,
    pub repetitions: Vec<f64>,
}

/// Frames per second of `pipeline`, cycling through `inputs`.
pub fn measure_fps<I, O, F>(mut pipeline: F, inputs: &[I], config: FpsConfig) -> Result<FpsReport, EvalError>
where
    F: FnMut(&I) -> O,
{
    if inputs.is_empty()
        || config.warmup < FpsConfig::MIN_WARMUP
        || config.timed < FpsConfig::MIN_TIMED
        || config.repetitions == 0
    {
        return Err(EvalError::Timing {
            min_warmup: FpsConfig::MIN_WARMUP,
            min_timed: FpsConfig::MIN_TIMED,
        });
    }
    for i in 0..config.warmup {
        black_box(pipeline(&inputs[i % inputs.len()]));
    }
    let mut reps = Vec::with_capacity(config.repetitions);
    for _ in 0..config.repetitions {
        let start = Instant::now();
        for i in 0..config.timed {
            black_box(pipeline(black_box(&inputs[i % inputs.len()])));
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        reps.push(config.timed as f64 / secs);
    }
    let mut sorted = reps.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(FpsReport {
        fps: sorted[sorted.len() / 2],
        repetitions: reps,
    })
}
