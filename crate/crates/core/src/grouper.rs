//! Pairs decoded left/right keypoints into ranked grasp detections.
//!
//! A left/right pair survives when its orientation classes agree, its
//! embeddings differ by less than `rho_embed`, the center heatmap at its
//! midpoint exceeds `rho_cen`, and the class angle agrees with the angle of
//! the keypoint segment to within `tau_orient` (modulo pi).

use std::cmp::Ordering;

use serde::Serialize;

use crate::decoder::{decode_bundle, DecodeConfig, DetectedKeypoint};
use crate::encoder::heatmap_cell;
use crate::geometry::{angle_distance, fold_angle, pair_to_grasp, Grasp, KeypointPair, OrientationClasses, Point};
use crate::scalar::Scalar;
use crate::tensor::{Grid2D, HeatmapBundle};

/// Final grasps kept after ranking.
pub const DEFAULT_MAX_OUTPUT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupingThresholds<T> {
    pub rho_embed: T,
    pub rho_cen: T,
    pub tau_orient: T,
    pub max_output: usize,
}

/// A keypoint pair with the center-heatmap confidence at its midpoint.
/// Indices refer to the left and right keypoint lists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredPair<T> {
    pub left: usize,
    pub right: usize,
    pub center_score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraspCandidate<T> {
    pub left: DetectedKeypoint<T>,
    pub right: DetectedKeypoint<T>,
    pub class_index: usize,
    pub center_score: T,
    pub theta_discrete: T,
    pub theta_continuous: T,
}

impl<T: Scalar> GraspCandidate<T> {
    pub fn keypoint_score(&self) -> T {
        (self.left.score + self.right.score) * T::lit(0.5)
    }

    pub fn to_grasp(&self) -> Grasp<T> {
        let pair = KeypointPair::new(
            Point::new(self.left.x, self.left.y),
            Point::new(self.right.x, self.right.y),
        )
        .expect("candidates are canonically ordered");
        pair_to_grasp(&pair)
    }
}

/// A ranked output grasp with the candidate it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedGrasp<T> {
    pub grasp: Grasp<T>,
    pub candidate: GraspCandidate<T>,
}

/// Center confidence at an image-space point.
pub fn center_score_at<T: Scalar>(center_map: &Grid2D, p: Point<T>, ratio: u32) -> T {
    let row = heatmap_cell(p.y, ratio, center_map.height());
    let col = heatmap_cell(p.x, ratio, center_map.width());
    T::lit(center_map.get(row, col) as f64)
}

/// Scores every left x right combination (Step 3).
pub fn extract_center_scores<T: Scalar>(
    left: &[DetectedKeypoint<T>],
    right: &[DetectedKeypoint<T>],
    center_map: &Grid2D,
    ratio: u32,
) -> Vec<ScoredPair<T>> {
    let mut out = Vec::with_capacity(left.len() * right.len());
    for (i, l) in left.iter().enumerate() {
        for (j, r) in right.iter().enumerate() {
            let mid = Point::new(l.x, l.y).midpoint(Point::new(r.x, r.y));
            out.push(ScoredPair {
                left: i,
                right: j,
                center_score: center_score_at(center_map, mid, ratio),
            });
        }
    }
    out
}

fn admit<T: Scalar>(
    l: &DetectedKeypoint<T>,
    r: &DetectedKeypoint<T>,
    center_score: T,
    thresholds: &GroupingThresholds<T>,
    classes: &OrientationClasses,
) -> Option<GraspCandidate<T>> {
    if l.class_index != r.class_index {
        return None;
    }
    if !((l.embedding - r.embedding).abs() < thresholds.rho_embed) {
        return None;
    }
    if !(center_score > thresholds.rho_cen) {
        return None;
    }
    let (pl, pr) = (Point::new(l.x, l.y), Point::new(r.x, r.y));
    if !pl.precedes(pr) {
        return None;
    }
    let theta_discrete = classes.class_to_angle(l.class_index).ok()?;
    let theta_continuous = fold_angle((pr.y - pl.y).atan2(pr.x - pl.x));
    Some(GraspCandidate {
        left: *l,
        right: *r,
        class_index: l.class_index,
        center_score,
        theta_discrete,
        theta_continuous,
    })
}

/// Step 4: class agreement, embedding distance, center confidence, and
/// canonical left/right order. All comparisons are strict.
pub fn filter_pairs<T: Scalar>(
    left: &[DetectedKeypoint<T>],
    right: &[DetectedKeypoint<T>],
    pairs: &[ScoredPair<T>],
    thresholds: &GroupingThresholds<T>,
    classes: &OrientationClasses,
) -> Vec<GraspCandidate<T>> {
    pairs
        .iter()
        .filter_map(|p| admit(&left[p.left], &right[p.right], p.center_score, thresholds, classes))
        .collect()
}

/// Step 5: drop candidates whose class angle and keypoint angle disagree
/// by more than `tau_orient` modulo pi.
pub fn orientation_filter<T: Scalar>(candidates: Vec<GraspCandidate<T>>, tau_orient: T) -> Vec<GraspCandidate<T>> {
    candidates
        .into_iter()
        .filter(|c| angle_distance(c.theta_discrete, c.theta_continuous) <= tau_orient)
        .collect()
}

fn ranking<T: Scalar>(a: &GraspCandidate<T>, b: &GraspCandidate<T>) -> Ordering {
    let key = |c: &GraspCandidate<T>| {
        [c.left.x.as_f64(), c.left.y.as_f64(), c.right.x.as_f64(), c.right.y.as_f64()]
    };
    b.center_score
        .as_f64()
        .total_cmp(&a.center_score.as_f64())
        .then(b.keypoint_score().as_f64().total_cmp(&a.keypoint_score().as_f64()))
        .then_with(|| {
            key(a)
                .iter()
                .zip(key(b).iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Orders candidates by center score, then mean keypoint score (both
/// descending), then keypoint coordinates, and converts them to grasps.
pub fn rank_candidates<T: Scalar>(mut candidates: Vec<GraspCandidate<T>>, max_output: usize) -> Vec<RankedGrasp<T>> {
    candidates.sort_by(ranking);
    candidates.truncate(max_output);
    candidates
        .into_iter()
        .map(|c| RankedGrasp {
            grasp: c.to_grasp(),
            candidate: c,
        })
        .collect()
}

/// Full grouping: decode, pair, filter, orientation-filter, rank.
pub fn group<T: Scalar>(
    bundle: &HeatmapBundle,
    thresholds: &GroupingThresholds<T>,
    decode: &DecodeConfig,
) -> Vec<RankedGrasp<T>> {
    let classes = match OrientationClasses::new(bundle.num_classes) {
        Ok(c) => c,
        Err(_) => return Vec::new(),
    };
    let (left, right) = decode_bundle::<T>(bundle, decode);
    let mut candidates = Vec::new();
    // pairs are generated lazily per left keypoint
    for l in &left {
        for r in &right {
            if l.class_index != r.class_index {
                continue;
            }
            let mid = Point::new(l.x, l.y).midpoint(Point::new(r.x, r.y));
            let score = center_score_at(&bundle.center, mid, bundle.downsample_ratio);
            if let Some(c) = admit(l, r, score, thresholds, &classes) {
                if angle_distance(c.theta_discrete, c.theta_continuous) <= thresholds.tau_orient {
                    candidates.push(c);
                }
            }
        }
    }
    rank_candidates(candidates, thresholds.max_output)
}
