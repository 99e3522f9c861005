//! Training losses with analytic gradients, and a central-difference
//! gradient checker.
//!
//! Every loss returns `(value, gradient)` where the gradient has the shape
//! of the prediction it differentiates. Reductions run in a fixed order so
//! results are reproducible bit for bit.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: prediction has {pred} elements, target has {truth}")]
    Dimension { pred: usize, truth: usize },
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    Step(f64),
    #[error("non-finite {what} at coordinate {coordinate}")]
    NonFinite { what: &'static str, coordinate: usize },
}

/// Focal-loss exponents: `alpha` on the prediction, `beta` on the
/// reduced penalty around positives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FocalParams<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> Default for FocalParams<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(2.0),
            beta: T::lit(4.0),
        }
    }
}

/// Weights of the pull, push and offset terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights<T> {
    pub pull: T,
    pub push: T,
    pub offset: T,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        Self {
            pull: T::one(),
            push: T::one(),
            offset: T::one(),
        }
    }
}

/// Clamp applied to predictions before taking logarithms. `1e-12` for
/// `f64`; for `f32` it is raised to machine epsilon since `1 - 1e-12`
/// rounds to 1.
pub fn log_clamp<T: Scalar>() -> T {
    T::lit(1e-12).max(T::epsilon())
}

/// Heatmap focal loss summed over all elements and divided by
/// `max(n, 1)`. Works for the flattened class stack and for the single
/// center plane alike. Ground-truth positives are elements exactly equal
/// to 1.
pub fn detection_loss<T: Scalar>(
    pred: &[T],
    truth: &[T],
    n: usize,
    params: FocalParams<T>,
) -> Result<(T, Vec<T>), LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::Dimension {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let eps = log_clamp::<T>();
    let (lo, hi) = (eps, T::one() - eps);
    let one = T::one();
    let (alpha, beta) = (params.alpha, params.beta);
    let norm = -one / T::lit(n.max(1) as f64);

    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (&p_raw, &y) in pred.iter().zip(truth) {
        let clamped = p_raw < lo || p_raw > hi;
        let p = p_raw.max(lo).min(hi);
        let (term, dterm) = if y == one {
            let q = one - p;
            let qa = q.powf(alpha);
            let ln_p = p.ln();
            let d = if alpha == T::zero() {
                one / p
            } else {
                -alpha * q.powf(alpha - one) * ln_p + qa / p
            };
            (qa * ln_p, d)
        } else {
            let weight = (one - y).powf(beta);
            let pa = p.powf(alpha);
            let q = one - p;
            let ln_q = q.ln();
            let d = if alpha == T::zero() {
                -one / q
            } else {
                alpha * p.powf(alpha - one) * ln_q - pa / q
            };
            (weight * pa * ln_q, weight * d)
        };
        total = total + term;
        grad.push(if clamped { T::zero() } else { norm * dterm });
    }
    Ok((norm * total, grad))
}

#[inline]
fn smooth_l1<T: Scalar>(d: T) -> (T, T) {
    let a = d.abs();
    if a < T::one() {
        (T::lit(0.5) * d * d, d)
    } else {
        (a - T::lit(0.5), d.signum())
    }
}

/// Smooth-L1 offset loss averaged over keypoints; gradient w.r.t. `pred`.
pub fn offset_loss<T: Scalar>(
    pred: &[[T; 2]],
    truth: &[[T; 2]],
) -> Result<(T, Vec<[T; 2]>), LossError> {
    if pred.len() != truth.len() {
        return Err(LossError::Dimension {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Ok((T::zero(), Vec::new()));
    }
    let inv_n = T::one() / T::lit(pred.len() as f64);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(truth) {
        let (lx, gx) = smooth_l1(p[0] - t[0]);
        let (ly, gy) = smooth_l1(p[1] - t[1]);
        total = total + lx + ly;
        grad.push([gx * inv_n, gy * inv_n]);
    }
    Ok((total * inv_n, grad))
}

/// Sub-pixel remainder of a full-resolution coordinate after division by
/// the downsampling ratio, per axis, in `[0, 1)`.
pub fn ground_truth_offset<T: Scalar>(x: T, y: T, ratio: u32) -> (T, T) {
    let r = T::lit(ratio.max(1) as f64);
    let frac = |v: T| {
        let q = v / r;
        let f = q - q.floor();
        // guard against rounding up to exactly 1
        if f >= T::one() {
            T::zero()
        } else {
            f
        }
    };
    (frac(x), frac(y))
}

/// Pull loss over `(left, right)` embedding pairs; gradient per pair.
pub fn pull_loss<T: Scalar>(pairs: &[(T, T)]) -> (T, Vec<(T, T)>) {
    if pairs.is_empty() {
        return (T::zero(), Vec::new());
    }
    let inv_n = T::one() / T::lit(pairs.len() as f64);
    let half = T::lit(0.5);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pairs.len());
    for &(l, r) in pairs {
        let mean = (l + r) * half;
        let (dl, dr) = (l - mean, r - mean);
        total = total + dl * dl + dr * dr;
        // d/dl [(l-m)^2 + (r-m)^2] with m = (l+r)/2 reduces to (l - r)
        grad.push(((l - r) * inv_n, (r - l) * inv_n));
    }
    (total * inv_n, grad)
}

/// Push loss with unit margin between pair means; zero when fewer than
/// two pairs exist. The subgradient at a zero mean difference is 0.
pub fn push_loss<T: Scalar>(pairs: &[(T, T)]) -> (T, Vec<(T, T)>) {
    let n = pairs.len();
    if n <= 1 {
        return (T::zero(), vec![(T::zero(), T::zero()); n]);
    }
    let half = T::lit(0.5);
    let one = T::one();
    let means: Vec<T> = pairs.iter().map(|&(l, r)| (l + r) * half).collect();
    let norm = one / T::lit((n * (n - 1)) as f64);
    let mut total = T::zero();
    let mut dmean = vec![T::zero(); n];
    for k in 0..n {
        for j in 0..n {
            if j == k {
                continue;
            }
            let d = means[k] - means[j];
            let slack = one - d.abs();
            if slack > T::zero() {
                total = total + slack;
                // ordered pairs (k, j) and (j, k) both move with means[k]
                let s = if d > T::zero() {
                    one
                } else if d < T::zero() {
                    -one
                } else {
                    T::zero()
                };
                dmean[k] = dmean[k] - s - s;
            }
        }
    }
    let grad = dmean
        .into_iter()
        .map(|g| {
            let v = g * norm * half;
            (v, v)
        })
        .collect();
    (total * norm, grad)
}

/// The five scalar loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossComponents<T> {
    pub keypoint_detection: T,
    pub center_detection: T,
    pub pull: T,
    pub push: T,
    pub offset: T,
}

pub fn total_loss<T: Scalar>(c: &LossComponents<T>, w: &LossWeights<T>) -> T {
    c.keypoint_detection + c.center_detection + w.pull * c.pull + w.push * c.push + w.offset * c.offset
}

/// Result of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_abs_error: f64,
    /// Largest relative error among coordinates above the absolute floor.
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub tolerance: f64,
    pub abs_floor: f64,
    pub passed: bool,
}

/// Absolute error below which a coordinate passes regardless of its
/// relative error.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-7;

/// Central finite differences of `f` at `point` against its analytic
/// gradient.
pub fn gradient_check<T, F>(
    mut f: F,
    point: &[T],
    step: T,
    tolerance: T,
) -> Result<GradCheckReport, LossError>
where
    T: Scalar,
    F: FnMut(&[T]) -> (T, Vec<T>),
{
    let h = step.as_f64();
    if !(1e-7..=1e-3).contains(&h) {
        return Err(LossError::Step(h));
    }
    let (value, analytic) = f(point);
    if !value.is_finite() {
        return Err(LossError::NonFinite {
            what: "loss value",
            coordinate: 0,
        });
    }
    if analytic.len() != point.len() {
        return Err(LossError::Dimension {
            pred: point.len(),
            truth: analytic.len(),
        });
    }
    let mut x = point.to_vec();
    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut passed = true;
    let tol = tolerance.as_f64();
    for i in 0..x.len() {
        let a = analytic[i];
        if !a.is_finite() {
            return Err(LossError::NonFinite {
                what: "analytic gradient",
                coordinate: i,
            });
        }
        let orig = x[i];
        x[i] = orig + step;
        let (fp, _) = f(&x);
        x[i] = orig - step;
        let (fm, _) = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (step + step);
        if !numeric.is_finite() {
            return Err(LossError::NonFinite {
                what: "numeric gradient",
                coordinate: i,
            });
        }
        let (a, n) = (a.as_f64(), numeric.as_f64());
        let abs = (a - n).abs();
        if abs > max_abs {
            max_abs = abs;
        }
        if abs > GRADCHECK_ABS_FLOOR {
            let rel = abs / a.abs().max(n.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = Some(i);
            }
            if rel >= tol {
                passed = false;
            }
        }
    }
    Ok(GradCheckReport {
        coordinates: x.len(),
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        worst_coordinate: worst,
        tolerance: tol,
        abs_floor: GRADCHECK_ABS_FLOOR,
        passed,
    })
}

/// Flattens pair losses into the `f(&[T]) -> (T, Vec<T>)` form the
/// gradient checker expects: `[l0, r0, l1, r1, ...]`.
pub fn flat_pair_loss<T: Scalar>(
    loss: fn(&[(T, T)]) -> (T, Vec<(T, T)>),
) -> impl Fn(&[T]) -> (T, Vec<T>) {
    move |x: &[T]| {
        let pairs: Vec<(T, T)> = x.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        let (v, g) = loss(&pairs);
        (v, g.into_iter().flat_map(|(a, b)| [a, b]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn perfect_positive_is_near_zero() {
        let (l, _) = detection_loss(&[1.0 - EPS], &[1.0f64], 1, FocalParams::default()).unwrap();
        assert!(l.abs() < 1e-20);
    }

    #[test]
    fn half_prediction_examples() {
        let expected = -(0.25f64) * 0.5f64.ln();
        let (l, _) = detection_loss(&[0.5], &[1.0f64], 1, FocalParams::default()).unwrap();
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.173287).abs() < 1e-6);
        let (l, _) = detection_loss(&[0.5], &[0.0f64], 1, FocalParams::default()).unwrap();
        assert!((l - expected).abs() < 1e-15);
    }

    #[test]
    fn detection_shape_mismatch() {
        let r = detection_loss(&[0.5, 0.5], &[1.0f64], 1, FocalParams::default());
        assert_eq!(r, Err(LossError::Dimension { pred: 2, truth: 1 }));
    }

    #[test]
    fn detection_uses_unit_normalizer_for_zero_grasps() {
        let (a, _) = detection_loss(&[0.3], &[0.0f64], 0, FocalParams::default()).unwrap();
        let (b, _) = detection_loss(&[0.3], &[0.0f64], 1, FocalParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn detection_decreases_toward_one_at_positive() {
        let mut last = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let (l, _) = detection_loss(&[p], &[1.0f64], 1, FocalParams::default()).unwrap();
            assert!(l < last);
            last = l;
        }
    }

    #[test]
    fn f32_clamp_stays_finite() {
        let (l, g) = detection_loss(&[1.0f32, 0.0], &[1.0, 0.0], 1, FocalParams::default()).unwrap();
        assert!(l.is_finite() && l >= 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn offset_examples() {
        assert_eq!(offset_loss(&[[0.3, 0.7]], &[[0.3, 0.7f64]]).unwrap().0, 0.0);
        assert_eq!(offset_loss(&[[0.5, 0.0]], &[[0.0, 0.0f64]]).unwrap().0, 0.125);
        assert_eq!(offset_loss(&[[2.0, 0.0]], &[[0.0, 0.0f64]]).unwrap().0, 1.5);
        let (l, g) = offset_loss::<f64>(&[], &[]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.is_empty());
        assert!(offset_loss(&[[0.0, 0.0f64]], &[]).is_err());
    }

    #[test]
    fn offset_definition_examples() {
        assert_eq!(ground_truth_offset(8.0f64, 4.0, 4), (0.0, 0.0));
        assert_eq!(ground_truth_offset(10.0f64, 7.0, 4), (0.5, 0.75));
        assert_eq!(ground_truth_offset(13.0f64, 5.0, 1), (0.0, 0.0));
    }

    #[test]
    fn pull_examples() {
        assert_eq!(pull_loss(&[(0.4f64, 0.4), (3.0, 3.0)]).0, 0.0);
        assert_eq!(pull_loss(&[(0.0f64, 2.0)]).0, 2.0);
        assert_eq!(pull_loss(&[(-1.0f64, 1.0)]).0, 2.0);
        assert_eq!(pull_loss::<f64>(&[]).0, 0.0);
    }

    #[test]
    fn push_examples() {
        assert_eq!(push_loss(&[(0.0f64, 0.0), (1.0, 1.0)]).0, 0.0);
        assert_eq!(push_loss(&[(0.5f64, 0.5), (0.0, 1.0)]).0, 1.0);
        assert_eq!(push_loss(&[(0.0f64, 0.0), (5.0, 5.0)]).0, 0.0);
        assert_eq!(push_loss(&[(0.0f64, 0.0)]).0, 0.0);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::<f64>::default();
        assert_eq!(total_loss(&LossComponents::default(), &w), 0.0);
        let ones = LossComponents { keypoint_detection: 1.0, center_detection: 1.0, pull: 1.0, push: 1.0, offset: 1.0 };
        assert_eq!(total_loss(&ones, &w), 5.0);
        let c = LossComponents { keypoint_detection: 0.2, center_detection: 0.1, pull: 0.3, push: 0.0, offset: 0.4 };
        assert!((total_loss(&c, &w) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradcheck_zero_gradient_point() {
        // pull loss at equal embeddings: gradient identically zero
        let f = flat_pair_loss::<f64>(pull_loss);
        let r = gradient_check(f, &[0.5, 0.5, 2.0, 2.0], 1e-5, 1e-4).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn gradcheck_rejects_bad_step_and_nonfinite() {
        let f = |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]);
        assert_eq!(gradient_check(f, &[1.0], 1e-2, 1e-4), Err(LossError::Step(1e-2)));
        let g = |_: &[f64]| (0.0, vec![f64::NAN]);
        assert!(matches!(
            gradient_check(g, &[1.0], 1e-5, 1e-4),
            Err(LossError::NonFinite { coordinate: 0, .. })
        ));
    }

    #[test]
    fn gradcheck_detects_wrong_gradient() {
        let f = |x: &[f64]| (x[0] * x[0], vec![3.0 * x[0]]);
        let r = gradient_check(f, &[1.0], 1e-5, 1e-4).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, Some(0));
    }
}
