//! Renders annotated grasps into heatmap-bundle shaped training targets.
//!
//! Keypoints are quantized to the heatmap by `floor(coord / R)`; the
//! remainder becomes the sub-pixel offset. When two grasps land on the same
//! (role, class, heatmap pixel) the one earlier in annotation order wins and
//! the later grasp is dropped entirely.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::decoder::DEFAULT_TOP_K;
use crate::geometry::{grasp_to_pair, Grasp, GeometryError, OrientationClasses, Point};
use crate::losses::ground_truth_offset;
use crate::scalar::{Scalar, F32_BELOW_ONE};
use crate::tensor::{Grid2D, HeatmapBundle, Role};

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("grasp {index}: {role} keypoint ({x}, {y}) lies outside the {width}x{height} image")]
    OutsideImage {
        index: usize,
        role: &'static str,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("grasp {index}: {source}")]
    InvalidGrasp {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("{count} grasps exceed the capacity of {max}")]
    Capacity { count: usize, max: usize },
    #[error("invalid encoder configuration: {0}")]
    Config(&'static str),
}

/// Target rendering parameters.
///
/// The Gaussian around each keypoint uses
/// `sigma = max(min_sigma, w / (sigma_divisor * R))` heatmap pixels and is
/// truncated at `truncation * sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EncoderConfig {
    pub downsample_ratio: u32,
    pub num_classes: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub min_sigma: f64,
    pub sigma_divisor: f64,
    pub truncation: f64,
}

impl EncoderConfig {
    pub fn new(num_classes: usize, downsample_ratio: u32, image_height: usize, image_width: usize) -> Self {
        Self {
            downsample_ratio,
            num_classes,
            image_height,
            image_width,
            min_sigma: 1.0,
            sigma_divisor: 3.0,
            truncation: 3.0,
        }
    }

    /// Heatmap size: `ceil(image / R)` per axis.
    pub fn heatmap_dims(&self) -> (usize, usize) {
        let r = self.downsample_ratio.max(1) as usize;
        (self.image_height.div_ceil(r), self.image_width.div_ceil(r))
    }

    fn check(&self) -> Result<OrientationClasses, EncoderError> {
        if self.downsample_ratio == 0 {
            return Err(EncoderError::Config("downsample ratio must be >= 1"));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(EncoderError::Config("image dimensions must be positive"));
        }
        if !(self.min_sigma > 0.0 && self.sigma_divisor > 0.0 && self.truncation > 0.0) {
            return Err(EncoderError::Config("Gaussian parameters must be positive"));
        }
        OrientationClasses::new(self.num_classes).map_err(|_| EncoderError::Config("num_classes must be >= 1"))
    }
}

/// Heatmap pixel (column, row) plus the sub-pixel offset of one keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PixelTarget<T> {
    pub col: usize,
    pub row: usize,
    pub offset: [T; 2],
}

/// Index entry for a grasp that survived deduplication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeypointTarget<T> {
    pub grasp_id: usize,
    pub class_index: usize,
    pub left: PixelTarget<T>,
    pub right: PixelTarget<T>,
    pub center: PixelTarget<T>,
}

/// Rendered targets: Gaussian heatmaps, dense offset planes (written at
/// keypoint pixels, zero elsewhere), zero embeddings, and the keypoint
/// index the offset and embedding losses gather from.
#[derive(Debug, Clone)]
pub struct TrainingTargets<T> {
    pub bundle: HeatmapBundle,
    pub keypoints: Vec<KeypointTarget<T>>,
}

fn pixel_target<T: Scalar>(
    p: Point<T>,
    index: usize,
    role: &'static str,
    cfg: &EncoderConfig,
) -> Result<PixelTarget<T>, EncoderError> {
    let (w, h) = (T::lit(cfg.image_width as f64), T::lit(cfg.image_height as f64));
    if !(p.x >= T::zero() && p.x < w && p.y >= T::zero() && p.y < h) {
        return Err(EncoderError::OutsideImage {
            index,
            role,
            x: p.x.as_f64(),
            y: p.y.as_f64(),
            width: cfg.image_width,
            height: cfg.image_height,
        });
    }
    let r = T::lit(cfg.downsample_ratio as f64);
    let (hh, hw) = cfg.heatmap_dims();
    let col = ((p.x / r).floor().to_usize().unwrap_or(0)).min(hw - 1);
    let row = ((p.y / r).floor().to_usize().unwrap_or(0)).min(hh - 1);
    let (ox, oy) = ground_truth_offset(p.x, p.y, cfg.downsample_ratio);
    Ok(PixelTarget {
        col,
        row,
        offset: [ox, oy],
    })
}

/// Snap distance, in heatmap cells, applied by [`heatmap_cell`].
pub const CELL_SNAP: f64 = 1e-5;

/// Heatmap cell containing the image coordinate `v` along an axis of
/// `len` cells. Coordinates within [`CELL_SNAP`] of a cell boundary snap
/// onto it, so midpoints recomputed from refined keypoints land in the same
/// cell the encoder chose.
pub fn heatmap_cell<T: Scalar>(v: T, ratio: u32, len: usize) -> usize {
    let q = v / T::lit(ratio.max(1) as f64);
    let nearest = q.round();
    let q = if (q - nearest).abs() < T::lit(CELL_SNAP) { nearest } else { q };
    q.floor().max(T::zero()).to_usize().unwrap_or(0).min(len.saturating_sub(1))
}

/// Quantizes every grasp and applies first-wins deduplication keyed on
/// (role, class, pixel).
pub fn assign_keypoints<T: Scalar>(
    annotations: &[Grasp<T>],
    config: &EncoderConfig,
) -> Result<Vec<KeypointTarget<T>>, EncoderError> {
    let classes = config.check()?;
    let mut taken: HashSet<(Role, usize, usize, usize)> = HashSet::new();
    let mut out = Vec::with_capacity(annotations.len());
    for (index, g) in annotations.iter().enumerate() {
        g.validate()
            .map_err(|source| EncoderError::InvalidGrasp { index, source })?;
        let pair = grasp_to_pair(g);
        let left = pixel_target(pair.left(), index, "left", config)?;
        let right = pixel_target(pair.right(), index, "right", config)?;
        let mut center = pixel_target(g.center(), index, "center", config)?;
        let (hh, hw) = config.heatmap_dims();
        center.col = heatmap_cell(g.x, config.downsample_ratio, hw);
        center.row = heatmap_cell(g.y, config.downsample_ratio, hh);
        let class_index = classes.angle_to_class(g.theta);
        let lk = (Role::Left, class_index, left.row, left.col);
        let rk = (Role::Right, class_index, right.row, right.col);
        if taken.contains(&lk) || taken.contains(&rk) {
            continue;
        }
        taken.insert(lk);
        taken.insert(rk);
        out.push(KeypointTarget {
            grasp_id: index,
            class_index,
            left,
            right,
            center,
        });
    }
    Ok(out)
}

fn splat_gaussian(plane: &mut Grid2D, row: usize, col: usize, sigma: f64, truncation: f64) {
    let reach = truncation * sigma;
    let rad = reach.floor() as i64;
    let (h, w) = (plane.height() as i64, plane.width() as i64);
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            let (r, c) = (row as i64 + dr, col as i64 + dc);
            if r < 0 || c < 0 || r >= h || c >= w {
                continue;
            }
            let d2 = (dr * dr + dc * dc) as f64;
            if d2 > reach * reach {
                continue;
            }
            let v = if d2 == 0.0 {
                1.0
            } else {
                ((-d2 / (2.0 * sigma * sigma)).exp() as f32).min(F32_BELOW_ONE)
            };
            let (r, c) = (r as usize, c as usize);
            if v > plane.get(r, c) {
                plane.set(r, c, v);
            }
        }
    }
}

fn store_offset(planes: &mut [Grid2D; 2], t: &PixelTarget<impl Scalar>) {
    for (axis, plane) in planes.iter_mut().enumerate() {
        plane.set(t.row, t.col, t.offset[axis].as_f32().min(F32_BELOW_ONE));
    }
}

/// Gaussian training targets for one image.
pub fn encode_targets<T: Scalar>(
    annotations: &[Grasp<T>],
    config: &EncoderConfig,
) -> Result<TrainingTargets<T>, EncoderError> {
    let keypoints = assign_keypoints(annotations, config)?;
    let (hh, hw) = config.heatmap_dims();
    let mut bundle = HeatmapBundle::zeros(config.num_classes, hh, hw, config.downsample_ratio);
    let r = config.downsample_ratio as f64;
    for kp in &keypoints {
        let w = annotations[kp.grasp_id].w.as_f64();
        let sigma = (w / (config.sigma_divisor * r)).max(config.min_sigma);
        let c = kp.class_index;
        splat_gaussian(&mut bundle.left[c], kp.left.row, kp.left.col, sigma, config.truncation);
        splat_gaussian(&mut bundle.right[c], kp.right.row, kp.right.col, sigma, config.truncation);
        splat_gaussian(&mut bundle.center, kp.center.row, kp.center.col, sigma, config.truncation);
    }
    // first writer wins where keypoints of different classes share a pixel
    for kp in keypoints.iter().rev() {
        store_offset(&mut bundle.offset_left, &kp.left);
        store_offset(&mut bundle.offset_right, &kp.right);
    }
    Ok(TrainingTargets { bundle, keypoints })
}

/// Spacing between embedding values of different grasps in an ideal bundle.
pub const IDEAL_EMBEDDING_GAP: f64 = 1.5;

/// Noise-free bundle a perfect network would emit: unit peaks at every
/// keypoint and center pixel, exact offsets, and embeddings that agree
/// within a grasp and differ by at least [`IDEAL_EMBEDDING_GAP`] between
/// grasps. The embedding assignment is a seeded permutation.
pub fn ideal_bundle<T: Scalar>(
    annotations: &[Grasp<T>],
    config: &EncoderConfig,
    embedding_seed: u64,
) -> Result<HeatmapBundle, EncoderError> {
    if annotations.len() > DEFAULT_TOP_K {
        return Err(EncoderError::Capacity {
            count: annotations.len(),
            max: DEFAULT_TOP_K,
        });
    }
    let keypoints = assign_keypoints(annotations, config)?;
    let (hh, hw) = config.heatmap_dims();
    let mut bundle = HeatmapBundle::zeros(config.num_classes, hh, hw, config.downsample_ratio);

    let mut rng = ChaCha8Rng::seed_from_u64(embedding_seed);
    let base: f64 = rng.gen_range(-2.0..2.0);
    let mut slots: Vec<usize> = (0..keypoints.len()).collect();
    slots.shuffle(&mut rng);

    for (kp, slot) in keypoints.iter().zip(&slots).rev() {
        let c = kp.class_index;
        bundle.left[c].set(kp.left.row, kp.left.col, 1.0);
        bundle.right[c].set(kp.right.row, kp.right.col, 1.0);
        bundle.center.set(kp.center.row, kp.center.col, 1.0);
        store_offset(&mut bundle.offset_left, &kp.left);
        store_offset(&mut bundle.offset_right, &kp.right);
        let e = (base + IDEAL_EMBEDDING_GAP * *slot as f64) as f32;
        bundle.embed_left.set(kp.left.row, kp.left.col, e);
        bundle.embed_right.set(kp.right.row, kp.right.col, e);
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EncoderConfig {
        EncoderConfig::new(18, 4, 64, 64)
    }

    fn g(x: f64, y: f64, theta: f64, w: f64) -> Grasp<f64> {
        Grasp::new(x, y, theta, w, None).unwrap()
    }

    fn count_ones(planes: &[Grid2D]) -> usize {
        planes.iter().map(|p| p.data().iter().filter(|&&v| v == 1.0).count()).sum()
    }

    #[test]
    fn heatmap_dims_round_up() {
        assert_eq!(EncoderConfig::new(18, 4, 227, 227).heatmap_dims(), (57, 57));
        assert_eq!(EncoderConfig::new(36, 4, 512, 512).heatmap_dims(), (128, 128));
    }

    #[test]
    fn aligned_grasp_has_unit_peaks_and_zero_offsets() {
        // keypoints (8, 12) and (24, 12)
        let t = encode_targets(&[g(16.0, 12.0, 0.0, 16.0)], &cfg()).unwrap();
        let kp = t.keypoints[0];
        assert_eq!(kp.class_index, 9);
        assert_eq!((kp.left.col, kp.left.row), (2, 3));
        assert_eq!((kp.right.col, kp.right.row), (6, 3));
        assert_eq!(kp.left.offset, [0.0, 0.0]);
        assert_eq!(t.bundle.left[9].get(3, 2), 1.0);
        assert_eq!(t.bundle.right[9].get(3, 6), 1.0);
        assert_eq!(t.bundle.center.get(3, 4), 1.0);
        assert_eq!(count_ones(&t.bundle.left), 1);
        assert_eq!(count_ones(&t.bundle.right), 1);
        assert_eq!(count_ones(std::slice::from_ref(&t.bundle.center)), 1);
        t.bundle.validate().unwrap();
    }

    #[test]
    fn left_keypoint_offset_example() {
        // left keypoint at (10, 7): grasp centered at (14, 7), w = 8, theta = 0
        let t = encode_targets(&[g(14.0, 7.0, 0.0, 8.0)], &cfg()).unwrap();
        let kp = t.keypoints[0];
        assert_eq!((kp.left.col, kp.left.row), (2, 1));
        assert_eq!(kp.left.offset, [0.5, 0.75]);
        assert_eq!(t.bundle.offset_left[0].get(1, 2), 0.5);
        assert_eq!(t.bundle.offset_left[1].get(1, 2), 0.75);
    }

    #[test]
    fn duplicate_left_pixel_drops_later_grasp() {
        let a = g(16.0, 12.0, 0.0, 16.0);
        let b = g(17.0, 13.0, 0.0, 17.0); // left keypoint (8.5, 13) -> same pixel
        let t = encode_targets(&[a, b], &cfg()).unwrap();
        assert_eq!(t.keypoints.len(), 1);
        assert_eq!(t.keypoints[0].grasp_id, 0);
    }

    #[test]
    fn different_classes_may_share_pixel() {
        let a = g(16.0, 12.0, 0.0, 16.0);
        // left keypoint also at (8, 12) but tilted into another class
        let theta = 0.5f64;
        let b = g(8.0 + 8.0 * theta.cos(), 12.0 + 8.0 * theta.sin(), theta, 16.0);
        let t = encode_targets(&[a, b], &cfg()).unwrap();
        assert_eq!(t.keypoints.len(), 2);
    }

    #[test]
    fn keypoint_outside_image_is_named() {
        let err = encode_targets(&[g(16.0, 12.0, 0.0, 16.0), g(60.0, 10.0, 0.0, 16.0)], &cfg()).unwrap_err();
        assert!(matches!(err, EncoderError::OutsideImage { index: 1, role: "right", .. }));
    }

    #[test]
    fn gaussians_stay_below_one_off_peak() {
        let t = encode_targets(&[g(32.0, 32.0, 0.3, 40.0)], &cfg()).unwrap();
        let peaks = count_ones(&t.bundle.left);
        assert_eq!(peaks, 1);
        let nonzero = t.bundle.left.iter().flat_map(|p| p.data()).filter(|&&v| v > 0.0).count();
        assert!(nonzero > 1);
        t.bundle.validate().unwrap();
    }

    #[test]
    fn ideal_bundle_empty_and_single() {
        let empty = ideal_bundle::<f64>(&[], &cfg(), 1).unwrap();
        assert_eq!(empty, HeatmapBundle::zeros(18, 16, 16, 4));
        let one = ideal_bundle(&[g(30.5, 20.25, 0.2, 14.0)], &cfg(), 1).unwrap();
        assert_eq!(count_ones(&one.left), 1);
        assert_eq!(count_ones(&one.right), 1);
        assert_eq!(count_ones(std::slice::from_ref(&one.center)), 1);
        one.validate().unwrap();
    }

    #[test]
    fn ideal_bundle_capacity() {
        let many: Vec<_> = (0..101).map(|_| g(32.0, 32.0, 0.0, 8.0)).collect();
        assert_eq!(
            ideal_bundle(&many, &cfg(), 0).unwrap_err(),
            EncoderError::Capacity { count: 101, max: 100 }
        );
    }

    #[test]
    fn ideal_embeddings_separated() {
        let gs = [g(12.0, 12.0, 0.0, 8.0), g(40.0, 12.0, 0.0, 8.0), g(12.0, 44.0, 0.0, 8.0)];
        let b = ideal_bundle(&gs, &cfg(), 7).unwrap();
        let kps = assign_keypoints(&gs, &cfg()).unwrap();
        let vals: Vec<f32> = kps
            .iter()
            .map(|k| {
                let l = b.embed_left.get(k.left.row, k.left.col);
                assert_eq!(l, b.embed_right.get(k.right.row, k.right.col));
                l
            })
            .collect();
        for i in 0..vals.len() {
            for j in 0..i {
                assert!((vals[i] - vals[j]).abs() >= 1.0);
            }
        }
        assert_eq!(b, ideal_bundle(&gs, &cfg(), 7).unwrap());
    }
}
