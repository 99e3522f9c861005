//! Grasp representations and rotated-rectangle geometry.
//!
//! Coordinates are image pixels with `x` to the right and `y` downward.
//! Angles are measured from `+x` toward `+y` (`atan2(dy, dx)` in pixel
//! coordinates) and folded into `(-pi/2, pi/2]`: a parallel-jaw grasp is
//! symmetric under a half turn.

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("keypoints coincide; a grasp needs nonzero width")]
    Degenerate,
    #[error("keypoints are not in canonical left/right order")]
    NotCanonical,
    #[error("grasp angle {0} outside (-pi/2, pi/2]")]
    AngleRange(f64),
    #[error("grasp width must be positive and finite, got {0}")]
    Width(f64),
    #[error("grasp height must be positive and finite, got {0}")]
    Height(f64),
    #[error("grasp center must be finite")]
    Center,
    #[error("orientation class {class} out of range for {count} classes")]
    ClassIndex { class: usize, count: usize },
    #[error("orientation class count must be positive")]
    NoClasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Point<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance(self, other: Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    #[inline]
    pub fn midpoint(self, other: Self) -> Self {
        let half = T::lit(0.5);
        Self::new((self.x + other.x) * half, (self.y + other.y) * half)
    }

    /// `self` precedes `other` in (x, then y) order.
    #[inline]
    pub fn precedes(self, other: Self) -> bool {
        self.x < other.x || (self.x == other.x && self.y < other.y)
    }
}

/// Reduces any finite angle modulo pi into `(-pi/2, pi/2]`.
pub fn fold_angle<T: Scalar>(theta: T) -> T {
    let pi = T::PI();
    let half = T::FRAC_PI_2();
    let mut t = theta % pi;
    if t > half {
        t = t - pi;
    } else if t <= -half {
        t = t + pi;
    }
    // rounding in the subtraction can land exactly on -pi/2
    if t <= -half {
        t = half;
    }
    t
}

/// Angular distance between two grasp orientations modulo pi, in `[0, pi/2]`.
pub fn angle_distance<T: Scalar>(a: T, b: T) -> T {
    let pi = T::PI();
    let d = ((a - b) % pi).abs();
    d.min(pi - d)
}

/// Left-middle and right-middle points of a grasp rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointPair<T> {
    left: Point<T>,
    right: Point<T>,
}

impl<T: Scalar> KeypointPair<T> {
    /// Requires canonical ordering (left precedes right in x, then y).
    pub fn new(left: Point<T>, right: Point<T>) -> Result<Self, GeometryError> {
        if left == right {
            return Err(GeometryError::Degenerate);
        }
        if !left.precedes(right) {
            return Err(GeometryError::NotCanonical);
        }
        Ok(Self { left, right })
    }

    /// Orders two points canonically.
    pub fn canonical(a: Point<T>, b: Point<T>) -> Result<Self, GeometryError> {
        if a.precedes(b) {
            Self::new(a, b)
        } else {
            Self::new(b, a)
        }
    }

    pub fn left(&self) -> Point<T> {
        self.left
    }

    pub fn right(&self) -> Point<T> {
        self.right
    }

    pub fn to_grasp(&self) -> Grasp<T> {
        pair_to_grasp(self)
    }
}

/// 4-DoF planar grasp with an optional rectangle height used only by the
/// evaluation metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grasp<T> {
    pub x: T,
    pub y: T,
    pub theta: T,
    pub w: T,
    pub h: Option<T>,
}

impl<T: Scalar> Grasp<T> {
    /// Validating constructor; `theta` must already be folded.
    pub fn new(x: T, y: T, theta: T, w: T, h: Option<T>) -> Result<Self, GeometryError> {
        let g = Self { x, y, theta, w, h };
        g.validate()?;
        Ok(g)
    }

    /// Like [`Grasp::new`] but folds `theta` modulo pi first.
    pub fn with_folded_angle(x: T, y: T, theta: T, w: T, h: Option<T>) -> Result<Self, GeometryError> {
        if !theta.is_finite() {
            return Err(GeometryError::AngleRange(theta.as_f64()));
        }
        Self::new(x, y, fold_angle(theta), w, h)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.x.is_finite() && self.y.is_finite()) {
            return Err(GeometryError::Center);
        }
        let half = T::FRAC_PI_2();
        if !(self.theta > -half && self.theta <= half) {
            return Err(GeometryError::AngleRange(self.theta.as_f64()));
        }
        if !(self.w > T::zero() && self.w.is_finite()) {
            return Err(GeometryError::Width(self.w.as_f64()));
        }
        if let Some(h) = self.h {
            if !(h > T::zero() && h.is_finite()) {
                return Err(GeometryError::Height(h.as_f64()));
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Point<T> {
        Point::new(self.x, self.y)
    }

    pub fn to_pair(&self) -> KeypointPair<T> {
        grasp_to_pair(self)
    }

    /// Rectangle with the annotated height, or `default_height` when absent.
    pub fn rect(&self, default_height: T) -> OrientedRect<T> {
        OrientedRect {
            center: self.center(),
            width: self.w,
            height: self.h.unwrap_or(default_height),
            theta: self.theta,
        }
    }
}

/// Center, width along the axis from the left to the right keypoint, angle.
pub fn pair_to_grasp<T: Scalar>(pair: &KeypointPair<T>) -> Grasp<T> {
    let (l, r) = (pair.left, pair.right);
    let c = l.midpoint(r);
    Grasp {
        x: c.x,
        y: c.y,
        theta: fold_angle((r.y - l.y).atan2(r.x - l.x)),
        w: l.distance(r),
        h: None,
    }
}

pub fn grasp_to_pair<T: Scalar>(g: &Grasp<T>) -> KeypointPair<T> {
    let half = g.w * T::lit(0.5);
    let (s, c) = g.theta.sin_cos();
    let a = Point::new(g.x - half * c, g.y - half * s);
    let b = Point::new(g.x + half * c, g.y + half * s);
    // valid grasps have w > 0 so the points are distinct
    let (left, right) = if a.precedes(b) { (a, b) } else { (b, a) };
    KeypointPair { left, right }
}

/// Quantized orientation bins. Class `c` represents `pi*c/count - pi/2`;
/// `-pi/2` and `pi/2` are the same grasp orientation and share class 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrientationClasses {
    count: usize,
}

impl OrientationClasses {
    pub fn new(count: usize) -> Result<Self, GeometryError> {
        if count == 0 {
            return Err(GeometryError::NoClasses);
        }
        Ok(Self { count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn class_to_angle<T: Scalar>(&self, class: usize) -> Result<T, GeometryError> {
        if class >= self.count {
            return Err(GeometryError::ClassIndex {
                class,
                count: self.count,
            });
        }
        Ok(T::PI() * T::lit(class as f64) / T::lit(self.count as f64) - T::FRAC_PI_2())
    }

    /// Nearest class representative under the modulo-pi distance; ties go
    /// to the smaller index.
    pub fn angle_to_class<T: Scalar>(&self, theta: T) -> usize {
        let n = self.count;
        let t = fold_angle(theta);
        let pos = ((t + T::FRAC_PI_2()) * T::lit(n as f64) / T::PI()).max(T::zero());
        let lower = (pos.floor().to_usize().unwrap_or(0)).min(n);
        let mut best = lower % n;
        let mut best_d = T::infinity();
        for cand in [lower % n, (lower + 1) % n, (lower + n - 1) % n] {
            let rep = self.class_to_angle::<T>(cand).unwrap();
            let d = angle_distance(t, rep);
            if d < best_d || (d == best_d && cand < best) {
                best = cand;
                best_d = d;
            }
        }
        best
    }

    /// Half a bin width: the largest angle error of class assignment.
    pub fn half_bin<T: Scalar>(&self) -> T {
        T::PI() / T::lit(2.0 * self.count as f64)
    }
}

/// Rotated rectangle; `width` runs along the grasp axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect<T> {
    pub center: Point<T>,
    pub width: T,
    pub height: T,
    pub theta: T,
}

impl<T: Scalar> OrientedRect<T> {
    /// Corners with positive signed (shoelace) area.
    pub fn corners(&self) -> [Point<T>; 4] {
        let (s, c) = self.theta.sin_cos();
        let hw = self.width * T::lit(0.5);
        let hh = self.height * T::lit(0.5);
        let ux = Point::new(c * hw, s * hw);
        let uy = Point::new(-s * hh, c * hh);
        let p = |a: T, b: T| {
            Point::new(
                self.center.x + a * ux.x + b * uy.x,
                self.center.y + a * ux.y + b * uy.y,
            )
        };
        let one = T::one();
        [p(-one, -one), p(one, -one), p(one, one), p(-one, one)]
    }

    pub fn area(&self) -> T {
        self.width * self.height
    }

    fn circumradius(&self) -> T {
        self.width.hypot(self.height) * T::lit(0.5)
    }

    /// Whether a point lies inside or on the boundary.
    pub fn contains(&self, p: Point<T>) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = p.x - self.center.x;
        let dy = p.y - self.center.y;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        u.abs() <= self.width * T::lit(0.5) && v.abs() <= self.height * T::lit(0.5)
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.center == other.center
            && self.width == other.width
            && self.height == other.height
            && fold_angle(self.theta) == fold_angle(other.theta)
    }

    fn sort_key(&self) -> [T; 5] {
        [self.center.x, self.center.y, self.width, self.height, fold_angle(self.theta)]
    }
}

/// Signed shoelace area.
pub fn polygon_area<T: Scalar>(poly: &[Point<T>]) -> T {
    let n = poly.len();
    if n < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc = acc + (a.x * b.y - b.x * a.y);
    }
    acc * T::lit(0.5)
}

#[inline]
fn cross<T: Scalar>(a: Point<T>, b: Point<T>, p: Point<T>) -> T {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Keeps the part of `poly` on the left of the directed edge `a -> b`.
fn clip_half_plane<T: Scalar>(poly: &[Point<T>], a: Point<T>, b: Point<T>, out: &mut Vec<Point<T>>) {
    out.clear();
    let n = poly.len();
    for i in 0..n {
        let s = poly[i];
        let e = poly[(i + 1) % n];
        let ds = cross(a, b, s);
        let de = cross(a, b, e);
        let s_in = ds >= T::zero();
        let e_in = de >= T::zero();
        if s_in != e_in {
            let t = ds / (ds - de);
            out.push(Point::new(s.x + (e.x - s.x) * t, s.y + (e.y - s.y) * t));
        }
        if e_in {
            out.push(e);
        }
    }
}

/// Sutherland-Hodgman intersection of two convex polygons with positive
/// orientation.
pub fn convex_intersection<T: Scalar>(subject: &[Point<T>], clip: &[Point<T>]) -> Vec<Point<T>> {
    let mut cur: Vec<Point<T>> = subject.to_vec();
    let mut next = Vec::with_capacity(subject.len() + clip.len());
    for i in 0..clip.len() {
        if cur.len() < 3 {
            return Vec::new();
        }
        clip_half_plane(&cur, clip[i], clip[(i + 1) % clip.len()], &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    if cur.len() < 3 {
        cur.clear();
    }
    cur
}

/// Intersection over union of two rotated rectangles.
pub fn rotated_iou<T: Scalar>(a: &OrientedRect<T>, b: &OrientedRect<T>) -> T {
    if a.same_shape(b) {
        return T::one();
    }
    let reach = a.circumradius() + b.circumradius();
    if a.center.distance(b.center) >= reach {
        return T::zero();
    }
    // fixed argument order keeps the float result exactly symmetric
    let (p, q) = {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        let a_first = ka
            .iter()
            .zip(kb.iter())
            .map(|(x, y)| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal))
            .find(|o| o.is_ne())
            .map_or(true, |o| o.is_lt());
        if a_first {
            (a, b)
        } else {
            (b, a)
        }
    };
    let inter = polygon_area(&convex_intersection(&p.corners(), &q.corners())).abs();
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}
