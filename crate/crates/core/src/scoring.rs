//! Depth-image grasp quality: collision, occupancy and height scores under
//! a planar two-finger gripper model, plus the dynamic re-targeting rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Grasp;
use crate::scalar::Scalar;
use crate::tensor::Grid2D;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("depth {what} must be positive and finite (element {index})")]
    Depth { what: &'static str, index: usize },
    #[error("depth is {depth:?} but surface is {surface:?}")]
    Dimension {
        depth: (usize, usize),
        surface: (usize, usize),
    },
    #[error("depth {depth} at element {index} lies below the supporting surface {surface}")]
    BelowSurface { index: usize, depth: f64, surface: f64 },
    #[error("grasp opening {required_mm} mm exceeds the gripper maximum of {max_mm} mm")]
    Capacity { required_mm: f64, max_mm: f64 },
    #[error("grasp center ({x}, {y}) is outside the image")]
    OutsideImage { x: f64, y: f64 },
    #[error("the {0} region is empty after clipping")]
    DegenerateRegion(&'static str),
    #[error("invalid gripper model: {0}")]
    Model(String),
}

/// Top-down depth in millimeters (larger is farther from the camera) with
/// the depth of the supporting surface under every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T> {
    depth: Grid2D<T>,
    surface: Grid2D<T>,
}

impl<T: Scalar> DepthImage<T> {
    pub fn new(depth: Grid2D<T>, surface: Grid2D<T>) -> Result<Self, ScoringError> {
        if depth.shape() != surface.shape() {
            return Err(ScoringError::Dimension {
                depth: depth.shape(),
                surface: surface.shape(),
            });
        }
        let positive = |v: T| v > T::zero() && v.is_finite();
        if let Some(index) = depth.data().iter().position(|&v| !positive(v)) {
            return Err(ScoringError::Depth { what: "value", index });
        }
        if let Some(index) = surface.data().iter().position(|&v| !positive(v)) {
            return Err(ScoringError::Depth { what: "surface", index });
        }
        if let Some(index) = depth.data().iter().zip(surface.data()).position(|(d, s)| d > s) {
            return Err(ScoringError::BelowSurface {
                index,
                depth: depth.data()[index].as_f64(),
                surface: surface.data()[index].as_f64(),
            });
        }
        Ok(Self { depth, surface })
    }

    /// Flat table: the surface is the farthest depth in the image.
    pub fn flat_surface(depth: Grid2D<T>) -> Result<Self, ScoringError> {
        let far = depth.data().iter().copied().fold(T::neg_infinity(), T::max);
        let surface = depth.map(|_| far);
        Self::new(depth, surface)
    }

    pub fn depth(&self) -> &Grid2D<T> {
        &self.depth
    }

    pub fn surface(&self) -> &Grid2D<T> {
        &self.surface
    }

    pub fn shape(&self) -> (usize, usize) {
        self.depth.shape()
    }
}

/// Planar parallel-jaw gripper. Finger rectangles extend `finger_length_mm`
/// beyond each keypoint along the closing axis and `finger_thickness_mm`
/// across it; the interior spans the grasp width with the same thickness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GripperModel2D<T> {
    pub finger_thickness_mm: T,
    pub max_open_mm: T,
    pub finger_length_mm: T,
    pub pixels_per_mm: T,
}

impl<T: Scalar> Default for GripperModel2D<T> {
    fn default() -> Self {
        Self {
            finger_thickness_mm: T::lit(17.0),
            max_open_mm: T::lit(200.0),
            finger_length_mm: T::lit(40.0),
            pixels_per_mm: T::one(),
        }
    }
}

impl<T: Scalar> GripperModel2D<T> {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let fields = [
            ("finger thickness", self.finger_thickness_mm),
            ("maximum opening", self.max_open_mm),
            ("finger length", self.finger_length_mm),
            ("pixel scale", self.pixels_per_mm),
        ];
        for (name, v) in fields {
            if !(v > T::zero() && v.is_finite()) {
                return Err(ScoringError::Model(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pixel coordinates `(row, col)` covered by the gripper.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GripperRegions {
    pub finger: Vec<(usize, usize)>,
    pub interior: Vec<(usize, usize)>,
}

/// Rasterizes the finger and interior regions of `grasp` (pixel centers at
/// half-integer coordinates), clipped to a `height` x `width` image.
pub fn gripper_regions<T: Scalar>(
    grasp: &Grasp<T>,
    model: &GripperModel2D<T>,
    height: usize,
    width: usize,
) -> Result<GripperRegions, ScoringError> {
    model.validate()?;
    let required = grasp.w / model.pixels_per_mm;
    if required > model.max_open_mm {
        return Err(ScoringError::Capacity {
            required_mm: required.as_f64(),
            max_mm: model.max_open_mm.as_f64(),
        });
    }
    let (hf, wf) = (T::lit(height as f64), T::lit(width as f64));
    if !(grasp.x >= T::zero() && grasp.x < wf && grasp.y >= T::zero() && grasp.y < hf) {
        return Err(ScoringError::OutsideImage {
            x: grasp.x.as_f64(),
            y: grasp.y.as_f64(),
        });
    }
    let half_w = grasp.w * T::lit(0.5);
    let outer = half_w + model.finger_length_mm * model.pixels_per_mm;
    let half_t = model.finger_thickness_mm * model.pixels_per_mm * T::lit(0.5);
    let reach = outer.hypot(half_t);
    let bound = |v: T, n: usize| v.max(T::zero()).min(T::lit(n as f64)).to_usize().unwrap_or(0);
    let (c0, c1) = (bound((grasp.x - reach).floor(), width), bound((grasp.x + reach).ceil(), width));
    let (r0, r1) = (bound((grasp.y - reach).floor(), height), bound((grasp.y + reach).ceil(), height));
    let (s, c) = grasp.theta.sin_cos();
    let mut regions = GripperRegions::default();
    for row in r0..r1 {
        let dy = T::lit(row as f64 + 0.5) - grasp.y;
        for col in c0..c1 {
            let dx = T::lit(col as f64 + 0.5) - grasp.x;
            let u = (dx * c + dy * s).abs();
            let v = (-dx * s + dy * c).abs();
            if v > half_t {
                continue;
            }
            if u <= half_w {
                regions.interior.push((row, col));
            } else if u <= outer {
                regions.finger.push((row, col));
            }
        }
    }
    Ok(regions)
}

fn center_pixel<T: Scalar>(grasp: &Grasp<T>, shape: (usize, usize)) -> Result<(usize, usize), ScoringError> {
    let (h, w) = shape;
    let (row, col) = (grasp.y.floor(), grasp.x.floor());
    if !(row >= T::zero() && col >= T::zero() && row < T::lit(h as f64) && col < T::lit(w as f64)) {
        return Err(ScoringError::OutsideImage {
            x: grasp.x.as_f64(),
            y: grasp.y.as_f64(),
        });
    }
    Ok((row.to_usize().unwrap_or(0), col.to_usize().unwrap_or(0)))
}

fn fraction<T: Scalar>(pixels: &[(usize, usize)], mut hit: impl FnMut(usize, usize) -> bool) -> T {
    let n = pixels.iter().filter(|&&(r, c)| hit(r, c)).count();
    T::lit(n as f64) / T::lit(pixels.len() as f64)
}

/// Share of finger pixels strictly deeper than the grasp center: 1 means
/// no collision.
pub fn collision_score<T: Scalar>(
    grasp: &Grasp<T>,
    image: &DepthImage<T>,
    model: &GripperModel2D<T>,
) -> Result<T, ScoringError> {
    let (h, w) = image.shape();
    let regions = gripper_regions(grasp, model, h, w)?;
    collision_from_regions(grasp, image, &regions)
}

fn collision_from_regions<T: Scalar>(
    grasp: &Grasp<T>,
    image: &DepthImage<T>,
    regions: &GripperRegions,
) -> Result<T, ScoringError> {
    if regions.finger.is_empty() {
        return Err(ScoringError::DegenerateRegion("finger"));
    }
    let (pr, pc) = center_pixel(grasp, image.shape())?;
    let dc = image.depth.get(pr, pc);
    Ok(fraction(&regions.finger, |r, c| image.depth.get(r, c) > dc))
}

/// Share of interior pixels strictly above the surface depth at the grasp
/// center.
pub fn occupancy_score<T: Scalar>(
    grasp: &Grasp<T>,
    image: &DepthImage<T>,
    model: &GripperModel2D<T>,
) -> Result<T, ScoringError> {
    let (h, w) = image.shape();
    let regions = gripper_regions(grasp, model, h, w)?;
    occupancy_from_regions(grasp, image, &regions)
}

fn occupancy_from_regions<T: Scalar>(
    grasp: &Grasp<T>,
    image: &DepthImage<T>,
    regions: &GripperRegions,
) -> Result<T, ScoringError> {
    if regions.interior.is_empty() {
        return Err(ScoringError::DegenerateRegion("interior"));
    }
    let (pr, pc) = center_pixel(grasp, image.shape())?;
    let ds = image.surface.get(pr, pc);
    Ok(fraction(&regions.interior, |r, c| ds > image.depth.get(r, c)))
}

/// `|d - d_s| / |d_s|`, clamped to `[0, 1]`.
pub fn height_ratio<T: Scalar>(depth: T, surface: T) -> T {
    ((depth - surface).abs() / surface.abs()).max(T::zero()).min(T::one())
}

/// Normalized elevation of the grasp center above the surface.
pub fn height_score<T: Scalar>(grasp: &Grasp<T>, image: &DepthImage<T>) -> Result<T, ScoringError> {
    let (r, c) = center_pixel(grasp, image.shape())?;
    Ok(height_ratio(image.depth.get(r, c), image.surface.get(r, c)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraspScore<T> {
    pub collision: T,
    pub occupancy: T,
    pub height: T,
    pub total: T,
}

impl<T: Scalar> GraspScore<T> {
    pub fn new(collision: T, occupancy: T, height: T) -> Self {
        Self {
            collision,
            occupancy,
            height,
            total: collision + occupancy + height,
        }
    }
}

pub fn score_grasp<T: Scalar>(
    grasp: &Grasp<T>,
    image: &DepthImage<T>,
    model: &GripperModel2D<T>,
) -> Result<GraspScore<T>, ScoringError> {
    let (h, w) = image.shape();
    let regions = gripper_regions(grasp, model, h, w)?;
    Ok(GraspScore::new(
        collision_from_regions(grasp, image, &regions)?,
        occupancy_from_regions(grasp, image, &regions)?,
        height_score(grasp, image)?,
    ))
}

/// Value given to grasps whose score cannot be computed.
pub const FAILED_TOTAL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredGrasp<T> {
    /// Position in the input list.
    pub rank: usize,
    pub grasp: Grasp<T>,
    pub score: Option<GraspScore<T>>,
    /// `score.total`, or [`FAILED_TOTAL`] when scoring failed.
    pub total: T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Scores every grasp and re-ranks by total, descending; ties keep input
/// order. Grasps that cannot be scored are kept with total -1.
pub fn score_grasps<T: Scalar>(
    grasps: &[Grasp<T>],
    image: &DepthImage<T>,
    model: &GripperModel2D<T>,
) -> Vec<ScoredGrasp<T>> {
    let mut scored: Vec<ScoredGrasp<T>> = grasps
        .iter()
        .enumerate()
        .map(|(rank, g)| match score_grasp(g, image, model) {
            Ok(s) => ScoredGrasp { rank, grasp: *g, score: Some(s), total: s.total, error: None },
            Err(e) => ScoredGrasp {
                rank,
                grasp: *g,
                score: None,
                total: T::lit(FAILED_TOTAL),
                error: Some(e.to_string()),
            },
        })
        .collect();
    scored.sort_by(|a, b| b.total.partial_cmp(&a.total).unwrap_or(std::cmp::Ordering::Equal));
    scored
}

/// Candidates considered when re-targeting a moving object.
pub const DYNAMIC_CANDIDATES: usize = 5;

/// Default re-targeting distance threshold in pixels.
pub const DEFAULT_TAU_CLOSE: f64 = 30.0;

/// Among the first five candidates, the one nearest to `previous` if it is
/// strictly closer than `tau_close`; otherwise `previous`.
pub fn select_dynamic<T: Scalar>(previous: &Grasp<T>, candidates: &[Grasp<T>], tau_close: T) -> Grasp<T> {
    let p = previous.center();
    let best = candidates
        .iter()
        .take(DYNAMIC_CANDIDATES)
        .map(|g| (g.center().distance(p), g))
        .fold(None::<(T, &Grasp<T>)>, |acc, (d, g)| match acc {
            Some((bd, _)) if bd <= d => acc,
            _ => Some((d, g)),
        });
    match best {
        Some((d, g)) if d < tau_close => *g,
        _ => *previous,
    }
}
