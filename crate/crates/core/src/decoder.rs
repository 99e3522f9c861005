//! Top-k keypoint extraction from grasp keypoint heatmaps.

use std::cmp::Ordering;

use serde::Serialize;

use crate::scalar::Scalar;
use crate::tensor::{Grid2D, HeatmapBundle, Role};

/// Candidates kept per role.
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DecodeConfig {
    pub k: usize,
    /// 3x3 max-pool peak suppression before top-k selection.
    pub suppress_non_maxima: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            suppress_non_maxima: true,
        }
    }
}

/// One decoded keypoint in input-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectedKeypoint<T> {
    pub x: T,
    pub y: T,
    pub class_index: usize,
    pub score: T,
    pub embedding: T,
    pub role: Role,
    /// Heatmap pixel the keypoint was read from.
    pub row: usize,
    pub col: usize,
}

/// Whether `(row, col)` equals the maximum of its 3x3 neighborhood.
fn is_local_max(plane: &Grid2D, row: usize, col: usize) -> bool {
    let v = plane.get(row, col);
    let (h, w) = plane.shape();
    let r0 = row.saturating_sub(1);
    let r1 = (row + 1).min(h - 1);
    let c0 = col.saturating_sub(1);
    let c1 = (col + 1).min(w - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if plane.get(r, c) > v {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Copy)]
struct Entry {
    score: f32,
    class: usize,
    row: usize,
    col: usize,
}

fn rank(a: &Entry, b: &Entry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.class.cmp(&b.class))
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
}

/// Top-k keypoints of one role across all class planes.
///
/// Output is sorted by score descending, ties by (class, row, col)
/// ascending. Zero-score pixels are never returned.
pub fn select_grasp_keypoints<T: Scalar>(
    heatmaps: &[Grid2D],
    embeddings: &Grid2D,
    offsets: &[Grid2D; 2],
    ratio: u32,
    role: Role,
    config: &DecodeConfig,
) -> Vec<DetectedKeypoint<T>> {
    if config.k == 0 {
        return Vec::new();
    }
    let mut entries = Vec::new();
    for (class, plane) in heatmaps.iter().enumerate() {
        let w = plane.width();
        for (i, &score) in plane.data().iter().enumerate() {
            if score <= 0.0 {
                continue;
            }
            let (row, col) = (i / w, i % w);
            if config.suppress_non_maxima && !is_local_max(plane, row, col) {
                continue;
            }
            entries.push(Entry {
                score,
                class,
                row,
                col,
            });
        }
    }
    if entries.len() > config.k {
        entries.select_nth_unstable_by(config.k - 1, rank);
        entries.truncate(config.k);
    }
    entries.sort_unstable_by(rank);

    let r = T::lit(ratio.max(1) as f64);
    let (xmax, ymax) = match heatmaps.first() {
        Some(p) => (
            T::lit(p.width() as f64) * r,
            T::lit(p.height() as f64) * r,
        ),
        None => return Vec::new(),
    };
    let clamp = |v: T, hi: T| {
        let below = hi - hi * T::epsilon();
        v.max(T::zero()).min(below)
    };
    entries
        .into_iter()
        .map(|e| {
            let ox = T::lit(offsets[0].get(e.row, e.col) as f64);
            let oy = T::lit(offsets[1].get(e.row, e.col) as f64);
            DetectedKeypoint {
                x: clamp((T::lit(e.col as f64) + ox) * r, xmax),
                y: clamp((T::lit(e.row as f64) + oy) * r, ymax),
                class_index: e.class,
                score: T::lit(e.score as f64),
                embedding: T::lit(embeddings.get(e.row, e.col) as f64),
                role,
                row: e.row,
                col: e.col,
            }
        })
        .collect()
}

/// Left and right keypoint candidates of a bundle.
pub fn decode_bundle<T: Scalar>(
    bundle: &HeatmapBundle,
    config: &DecodeConfig,
) -> (Vec<DetectedKeypoint<T>>, Vec<DetectedKeypoint<T>>) {
    let decode = |role| {
        select_grasp_keypoints(
            bundle.heatmaps(role),
            bundle.embeddings(role),
            bundle.offsets(role),
            bundle.downsample_ratio,
            role,
            config,
        )
    };
    (decode(Role::Left), decode(Role::Right))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planes(n: usize, h: usize, w: usize) -> (Vec<Grid2D>, Grid2D, [Grid2D; 2]) {
        (
            vec![Grid2D::zeros(h, w); n],
            Grid2D::zeros(h, w),
            [Grid2D::zeros(h, w), Grid2D::zeros(h, w)],
        )
    }

    #[test]
    fn offset_refinement_example() {
        let (mut hm, emb, mut off) = planes(1, 4, 4);
        hm[0].set(1, 2, 1.0);
        off[0].set(1, 2, 0.5);
        off[1].set(1, 2, 0.75);
        let kps = select_grasp_keypoints::<f64>(&hm, &emb, &off, 4, Role::Left, &DecodeConfig::default());
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].x, kps[0].y), (10.0, 7.0));
        assert_eq!(kps[0].score, 1.0);
    }

    #[test]
    fn zero_heatmaps_decode_empty() {
        let b = HeatmapBundle::zeros(18, 8, 8, 4);
        let (l, r) = decode_bundle::<f64>(&b, &DecodeConfig::default());
        assert!(l.is_empty() && r.is_empty());
    }

    #[test]
    fn suppression_keeps_one_peak_of_a_blob() {
        let (mut hm, emb, off) = planes(1, 7, 7);
        for r in 2..5 {
            for c in 2..5 {
                hm[0].set(r, c, 0.5);
            }
        }
        hm[0].set(3, 3, 0.9);
        let on = select_grasp_keypoints::<f64>(&hm, &emb, &off, 4, Role::Left, &DecodeConfig::default());
        assert_eq!(on.len(), 1);
        let off_cfg = DecodeConfig { suppress_non_maxima: false, ..Default::default() };
        let all = select_grasp_keypoints::<f64>(&hm, &emb, &off, 4, Role::Left, &off_cfg);
        assert_eq!(all.len(), 9);
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        // 150 isolated peaks on a 31x31 grid with distinct scores
        let (mut hm, emb, off) = planes(2, 31, 31);
        let mut expected = Vec::new();
        let mut n = 0;
        for r in (0..31).step_by(2) {
            for c in (0..31).step_by(2) {
                if n == 150 {
                    break;
                }
                let class = n % 2;
                let s = ((n * 37) % 150 + 1) as f32 / 151.0;
                hm[class].set(r, c, s);
                expected.push((s, class, r, c));
                n += 1;
            }
        }
        expected.sort_by(|a, b| b.0.total_cmp(&a.0));
        let kps = select_grasp_keypoints::<f64>(&hm, &emb, &off, 1, Role::Right, &DecodeConfig::default());
        assert_eq!(kps.len(), 100);
        for (kp, e) in kps.iter().zip(&expected) {
            assert_eq!((kp.score as f32, kp.class_index, kp.row, kp.col), *e);
        }
    }

    #[test]
    fn ties_break_by_class_row_col() {
        let (mut hm, emb, off) = planes(2, 5, 5);
        hm[1].set(0, 0, 0.5);
        hm[0].set(4, 4, 0.5);
        hm[0].set(0, 4, 0.5);
        let cfg = DecodeConfig { k: 2, ..Default::default() };
        let kps = select_grasp_keypoints::<f64>(&hm, &emb, &off, 1, Role::Left, &cfg);
        let got: Vec<_> = kps.iter().map(|k| (k.class_index, k.row, k.col)).collect();
        assert_eq!(got, [(0, 0, 4), (0, 4, 4)]);
    }

    #[test]
    fn k_one_returns_global_max() {
        let (mut hm, emb, off) = planes(3, 6, 6);
        hm[0].set(1, 1, 0.4);
        hm[2].set(4, 4, 0.8);
        hm[1].set(2, 5, 0.6);
        let cfg = DecodeConfig { k: 1, ..Default::default() };
        let kps = select_grasp_keypoints::<f64>(&hm, &emb, &off, 4, Role::Left, &cfg);
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].class_index, kps[0].row, kps[0].col), (2, 4, 4));
    }
}
