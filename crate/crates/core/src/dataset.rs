//! Dataset preparation: grasp-coverage filtering and RG-D input composition.

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Grasp, Point};
use crate::profile::ProfileName;
use crate::scalar::Scalar;
use crate::tensor::Grid2D;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("plane `{plane}` is {actual:?}, expected {expected:?}")]
    Dimension {
        plane: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("expected 3 color planes, got {0}")]
    ChannelCount(usize),
    #[error("annotation {0} has no rectangle height")]
    MissingHeight(usize),
}

/// Outcome of the coverage rule for one annotated image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Keep,
    Remove,
    FlagForReview,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageDecision<T> {
    pub ratio: T,
    pub decision: Decision,
}

/// Keep above 0.8, remove below 0.2; the closed band `[0.2, 0.8]` goes
/// to manual review.
pub fn classify_annotation<T: Scalar>(ratio: T) -> CoverageDecision<T> {
    let decision = if ratio > T::lit(0.8) {
        Decision::Keep
    } else if ratio < T::lit(0.2) {
        Decision::Remove
    } else {
        Decision::FlagForReview
    };
    CoverageDecision { ratio, decision }
}

/// Fraction of mask pixels covered by the union of the grasp rectangles.
///
/// A pixel counts as covered when its center lies inside a rectangle;
/// mask pixels are foreground when nonzero. Grasps without a height are
/// an error.
pub fn coverage_ratio<T: Scalar>(grasps: &[Grasp<T>], mask: &Grid2D) -> Result<T, DatasetError> {
    let (h, w) = mask.shape();
    let mask_count = mask.data().iter().filter(|&&v| v != 0.0).count();
    if mask_count == 0 {
        return Err(DatasetError::EmptyMask);
    }
    let mut covered = vec![false; h * w];
    let half = T::lit(0.5);
    for (i, g) in grasps.iter().enumerate() {
        let height = g.h.ok_or(DatasetError::MissingHeight(i))?;
        let rect = g.rect(height);
        let corners = rect.corners();
        let (mut x0, mut x1, mut y0, mut y1) = (T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity());
        for c in corners {
            x0 = x0.min(c.x);
            x1 = x1.max(c.x);
            y0 = y0.min(c.y);
            y1 = y1.max(c.y);
        }
        let clamp = |v: T, n: usize| v.max(T::zero()).min(T::lit(n as f64)).to_usize().unwrap_or(0);
        let (c0, c1) = (clamp(x0.floor(), w), clamp(x1.ceil(), w));
        let (r0, r1) = (clamp(y0.floor(), h), clamp(y1.ceil(), h));
        for r in r0..r1 {
            for c in c0..c1 {
                let idx = r * w + c;
                if !covered[idx] {
                    let p = Point::new(T::lit(c as f64) + half, T::lit(r as f64) + half);
                    covered[idx] = rect.contains(p);
                }
            }
        }
    }
    let hit = mask
        .data()
        .iter()
        .zip(&covered)
        .filter(|(&m, &c)| m != 0.0 && c)
        .count();
    Ok(T::lit(hit as f64) / T::lit(mask_count as f64))
}

/// Per-channel whitening statistics for (R, G, D) inputs scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelStats<T> {
    pub means: [T; 3],
    pub stds: [T; 3],
    pub profile: ProfileName,
}

impl<T: Scalar> ChannelStats<T> {
    pub fn cornell() -> Self {
        Self {
            means: [T::lit(0.85), T::lit(0.81), T::lit(0.25)],
            stds: [T::lit(0.10), T::lit(0.11), T::lit(0.09)],
            profile: ProfileName::Cornell,
        }
    }

    pub fn ajd() -> Self {
        Self {
            means: [T::lit(0.71), T::lit(0.71), T::lit(0.20)],
            stds: [T::lit(0.06), T::lit(0.07), T::lit(0.09)],
            profile: ProfileName::Ajd,
        }
    }
}

fn check_dims<T: Copy>(plane: &'static str, g: &Grid2D<T>, shape: (usize, usize)) -> Result<(), DatasetError> {
    if g.shape() != shape {
        return Err(DatasetError::Dimension {
            plane,
            expected: shape,
            actual: g.shape(),
        });
    }
    Ok(())
}

/// Builds the whitened (R, G, D) network input: the blue channel is
/// replaced by depth, all channels are scaled from `[0, 255]` to `[0, 1]`
/// and whitened with `stats`.
pub fn compose_rgd<T: Scalar>(
    rgb: &[Grid2D<T>],
    depth: &Grid2D<T>,
    stats: &ChannelStats<T>,
) -> Result<[Grid2D<T>; 3], DatasetError> {
    if rgb.len() != 3 {
        return Err(DatasetError::ChannelCount(rgb.len()));
    }
    let shape = rgb[0].shape();
    check_dims("green", &rgb[1], shape)?;
    check_dims("blue", &rgb[2], shape)?;
    check_dims("depth", depth, shape)?;
    let scale = T::lit(255.0);
    let whiten = |g: &Grid2D<T>, ch: usize| g.map(|v| (v / scale - stats.means[ch]) / stats.stds[ch]);
    Ok([whiten(&rgb[0], 0), whiten(&rgb[1], 1), whiten(depth, 2)])
}

/// Inverse of [`compose_rgd`]: recovers (R, G, D) on the `[0, 255]` scale.
pub fn decompose_rgd<T: Scalar>(rgd: &[Grid2D<T>; 3], stats: &ChannelStats<T>) -> [Grid2D<T>; 3] {
    let scale = T::lit(255.0);
    let unwhiten = |ch: usize| rgd[ch].map(|v| (v * stats.stds[ch] + stats.means[ch]) * scale);
    [unwhiten(0), unwhiten(1), unwhiten(2)]
}

/// One line of a coverage filtering report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRecord {
    #[serde(rename = "imageId")]
    pub image_id: String,
    pub ratio: f64,
    pub decision: Decision,
}

/// Coverage report with the ids that need manual review listed separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub records: Vec<CoverageRecord>,
    pub review: Vec<String>,
    pub kept: usize,
    pub removed: usize,
}

impl FilterReport {
    /// Records are sorted by image id.
    pub fn new(mut records: Vec<CoverageRecord>) -> Self {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let review = records
            .iter()
            .filter(|r| r.decision == Decision::FlagForReview)
            .map(|r| r.image_id.clone())
            .collect();
        let count = |d| records.iter().filter(|r| r.decision == d).count();
        Self {
            kept: count(Decision::Keep),
            removed: count(Decision::Remove),
            review,
            records,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_mask(h: usize, w: usize) -> Grid2D {
        Grid2D::filled(h, w, 1.0)
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_annotation(0.85).decision, Decision::Keep);
        assert_eq!(classify_annotation(0.1).decision, Decision::Remove);
        assert_eq!(classify_annotation(0.5).decision, Decision::FlagForReview);
        assert_eq!(classify_annotation(0.8).decision, Decision::FlagForReview);
        assert_eq!(classify_annotation(0.2).decision, Decision::FlagForReview);
    }

    #[test]
    fn coverage_full_and_empty() {
        let mask = full_mask(10, 20);
        let g = Grasp::new(10.0, 5.0, 0.0, 20.0, Some(10.0)).unwrap();
        assert_eq!(coverage_ratio(&[g], &mask).unwrap(), 1.0);
        assert_eq!(coverage_ratio::<f64>(&[], &mask).unwrap(), 0.0);
        assert_eq!(coverage_ratio::<f64>(&[], &Grid2D::zeros(3, 3)), Err(DatasetError::EmptyMask));
    }

    #[test]
    fn coverage_half_mask() {
        let mask = full_mask(40, 40);
        let g = Grasp::new(10.0, 20.0, 0.0, 20.0, Some(40.0)).unwrap();
        let r: f64 = coverage_ratio(&[g], &mask).unwrap();
        assert!((r - 0.5).abs() <= 2.0 / (1600f64).sqrt());
    }

    #[test]
    fn coverage_needs_height() {
        let g = Grasp::new(1.0, 1.0, 0.0, 2.0, None).unwrap();
        assert_eq!(coverage_ratio(&[g], &full_mask(4, 4)), Err(DatasetError::MissingHeight(0)));
    }

    #[test]
    fn whitening_examples() {
        let stats = ChannelStats::<f64>::cornell();
        let px = |v: f64| Grid2D::filled(1, 1, v);
        let out = compose_rgd(&[px(255.0), px(0.81 * 255.0), px(9.0)], &px(0.25 * 255.0), &stats).unwrap();
        assert!((out[0].get(0, 0) - 1.5).abs() < 1e-12);
        assert!(out[1].get(0, 0).abs() < 1e-12);
        assert!(out[2].get(0, 0).abs() < 1e-12);
        let one_std = compose_rgd(&[px(0.95 * 255.0), px(0.0), px(0.0)], &px(0.0), &stats).unwrap();
        assert!((one_std[0].get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_checks_dims() {
        let stats = ChannelStats::<f64>::ajd();
        let a = Grid2D::<f64>::zeros(2, 2);
        let b = Grid2D::<f64>::zeros(2, 3);
        assert!(matches!(
            compose_rgd(&[a.clone(), a.clone(), a.clone()], &b, &stats),
            Err(DatasetError::Dimension { plane: "depth", .. })
        ));
        assert_eq!(compose_rgd(&[a.clone()], &a, &stats).unwrap_err(), DatasetError::ChannelCount(1));
    }

    #[test]
    fn report_lists_review_ids() {
        let rec = |id: &str, ratio: f64| CoverageRecord {
            image_id: id.into(),
            ratio,
            decision: classify_annotation(ratio).decision,
        };
        let r = FilterReport::new(vec![rec("b", 0.5), rec("a", 0.9), rec("c", 0.1)]);
        assert_eq!(r.review, ["b"]);
        assert_eq!((r.kept, r.removed), (1, 1));
        assert_eq!(r.records[0].image_id, "a");
    }
}
