//! Dense 2-D grids and the heatmap bundle consumed by the keypoint decoder.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("grid dimensions must be positive, got {height}x{width}")]
    EmptyDimension { height: usize, width: usize },
    #[error("grid data length {actual} does not match {height}x{width}")]
    DataLength {
        height: usize,
        width: usize,
        actual: usize,
    },
    #[error("plane `{plane}` has shape {actual:?}, expected {expected:?}")]
    ShapeMismatch {
        plane: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("plane `{plane}` has {actual} channels, expected {expected}")]
    PlaneCount {
        plane: String,
        expected: usize,
        actual: usize,
    },
    #[error("plane `{plane}` holds a non-finite value at element {index}")]
    NonFinite { plane: String, index: usize },
    #[error("plane `{plane}` value {value} at element {index} is outside {range}")]
    OutOfRange {
        plane: String,
        index: usize,
        value: f32,
        range: &'static str,
    },
    #[error("bundle must declare at least one orientation class")]
    NoClasses,
    #[error("downsample ratio must be at least 1")]
    ZeroRatio,
}

/// Row-major dense grid. Storage defaults to `f32`, the on-disk element type.
#[derive(Clone, PartialEq)]
pub struct Grid2D<T = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Grid2D<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid2D")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Copy + Default> Grid2D<T> {
    /// Grid of `T::default()` values.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::default())
    }

    /// # Panics
    /// If either dimension is zero.
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T: Copy> Grid2D<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self, TensorError> {
        if height == 0 || width == 0 {
            return Err(TensorError::EmptyDimension { height, width });
        }
        if data.len() != height * width {
            return Err(TensorError::DataLength {
                height,
                width,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    /// Bounds-checked read with signed coordinates.
    #[inline]
    pub fn try_get(&self, row: i64, col: i64) -> Option<T> {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            None
        } else {
            Some(self.get(row as usize, col as usize))
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid2D<U> {
        Grid2D {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Grid2D<f32> {
    /// Widens storage to a generic scalar.
    pub fn to_scalar<T: Scalar>(&self) -> Grid2D<T> {
        self.map(|v| T::lit(v as f64))
    }

    fn check_finite(&self, plane: &str) -> Result<(), TensorError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite {
                plane: plane.to_string(),
                index,
            }),
            None => Ok(()),
        }
    }

    fn check_range(
        &self,
        plane: &str,
        upper_inclusive: bool,
        range: &'static str,
    ) -> Result<(), TensorError> {
        self.check_finite(plane)?;
        let bad = self.data.iter().position(|&v| {
            if upper_inclusive {
                !(0.0..=1.0).contains(&v)
            } else {
                !(0.0..1.0).contains(&v)
            }
        });
        match bad {
            Some(index) => Err(TensorError::OutOfRange {
                plane: plane.to_string(),
                index,
                value: self.data[index],
                range,
            }),
            None => Ok(()),
        }
    }
}

/// Canonical plane names, in serialization order.
pub const PLANE_LEFT: &str = "left";
pub const PLANE_RIGHT: &str = "right";
pub const PLANE_CENTER: &str = "center";
pub const PLANE_OFFSET_LEFT: &str = "offsetL";
pub const PLANE_OFFSET_RIGHT: &str = "offsetR";
pub const PLANE_EMBED_LEFT: &str = "embedL";
pub const PLANE_EMBED_RIGHT: &str = "embedR";

/// Which of the two grasp keypoint branches a plane belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Left,
    Right,
}

/// Network-output shaped planes for one image.
///
/// `left`/`right` hold one heatmap per orientation class, offsets hold the
/// x (index 0) and y (index 1) sub-pixel corrections, and the embedding
/// planes hold one scalar per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapBundle {
    pub left: Vec<Grid2D>,
    pub right: Vec<Grid2D>,
    pub center: Grid2D,
    pub offset_left: [Grid2D; 2],
    pub offset_right: [Grid2D; 2],
    pub embed_left: Grid2D,
    pub embed_right: Grid2D,
    pub num_classes: usize,
    pub downsample_ratio: u32,
}

impl HeatmapBundle {
    /// All-zero bundle.
    ///
    /// # Panics
    /// If a dimension is zero.
    pub fn zeros(num_classes: usize, height: usize, width: usize, downsample_ratio: u32) -> Self {
        let plane = Grid2D::zeros(height, width);
        Self {
            left: vec![plane.clone(); num_classes],
            right: vec![plane.clone(); num_classes],
            center: plane.clone(),
            offset_left: [plane.clone(), plane.clone()],
            offset_right: [plane.clone(), plane.clone()],
            embed_left: plane.clone(),
            embed_right: plane,
            num_classes,
            downsample_ratio,
        }
    }

    pub fn height(&self) -> usize {
        self.center.height()
    }

    pub fn width(&self) -> usize {
        self.center.width()
    }

    pub fn heatmaps(&self, role: Role) -> &[Grid2D] {
        match role {
            Role::Left => &self.left,
            Role::Right => &self.right,
        }
    }

    pub fn offsets(&self, role: Role) -> &[Grid2D; 2] {
        match role {
            Role::Left => &self.offset_left,
            Role::Right => &self.offset_right,
        }
    }

    pub fn embeddings(&self, role: Role) -> &Grid2D {
        match role {
            Role::Left => &self.embed_left,
            Role::Right => &self.embed_right,
        }
    }

    /// Planes in canonical serialization order with their names.
    pub fn named_stacks(&self) -> [(&'static str, Vec<&Grid2D>); 7] {
        [
            (PLANE_LEFT, self.left.iter().collect()),
            (PLANE_RIGHT, self.right.iter().collect()),
            (PLANE_CENTER, vec![&self.center]),
            (PLANE_OFFSET_LEFT, self.offset_left.iter().collect()),
            (PLANE_OFFSET_RIGHT, self.offset_right.iter().collect()),
            (PLANE_EMBED_LEFT, vec![&self.embed_left]),
            (PLANE_EMBED_RIGHT, vec![&self.embed_right]),
        ]
    }

    /// Checks every bundle invariant, reporting the first offending plane.
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.num_classes == 0 {
            return Err(TensorError::NoClasses);
        }
        if self.downsample_ratio == 0 {
            return Err(TensorError::ZeroRatio);
        }
        for (name, stack) in [(PLANE_LEFT, &self.left), (PLANE_RIGHT, &self.right)] {
            if stack.len() != self.num_classes {
                return Err(TensorError::PlaneCount {
                    plane: name.to_string(),
                    expected: self.num_classes,
                    actual: stack.len(),
                });
            }
        }
        let shape = self.center.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(TensorError::EmptyDimension {
                height: shape.0,
                width: shape.1,
            });
        }
        for (name, stack) in self.named_stacks() {
            for (i, grid) in stack.iter().enumerate() {
                let label = plane_label(name, i, stack.len());
                if grid.shape() != shape {
                    return Err(TensorError::ShapeMismatch {
                        plane: label,
                        expected: shape,
                        actual: grid.shape(),
                    });
                }
                match name {
                    PLANE_LEFT | PLANE_RIGHT | PLANE_CENTER => {
                        grid.check_range(&label, true, "[0, 1]")?
                    }
                    PLANE_OFFSET_LEFT | PLANE_OFFSET_RIGHT => {
                        grid.check_range(&label, false, "[0, 1)")?
                    }
                    _ => grid.check_finite(&label)?,
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn plane_label(name: &str, index: usize, count: usize) -> String {
    if count == 1 {
        name.to_string()
    } else {
        format!("{name}[{index}]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Grid2D::from_vec(2, 2, vec![0.0f32; 3]).is_err());
        assert!(Grid2D::from_vec(0, 2, Vec::<f32>::new()).is_err());
        let g = Grid2D::from_vec(2, 3, (0..6).map(|v| v as f32).collect()).unwrap();
        assert_eq!(g.get(1, 2), 5.0);
        assert_eq!(g.try_get(2, 0), None);
        assert_eq!(g.try_get(-1, 0), None);
    }

    #[test]
    fn zero_bundle_is_valid() {
        HeatmapBundle::zeros(18, 57, 57, 4).validate().unwrap();
    }

    #[test]
    fn rejects_heatmap_above_one() {
        let mut b = HeatmapBundle::zeros(2, 3, 3, 4);
        b.left[1].set(0, 0, 1.5);
        match b.validate() {
            Err(TensorError::OutOfRange { plane, .. }) => assert_eq!(plane, "left[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_offset_equal_to_one() {
        let mut b = HeatmapBundle::zeros(1, 3, 3, 4);
        b.offset_right[1].set(2, 2, 1.0);
        match b.validate() {
            Err(TensorError::OutOfRange { plane, .. }) => assert_eq!(plane, "offsetR[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_nan_embedding() {
        let mut b = HeatmapBundle::zeros(1, 3, 3, 4);
        b.embed_left.set(1, 1, f32::NAN);
        assert!(matches!(b.validate(), Err(TensorError::NonFinite { plane, .. }) if plane == "embedL"));
    }

    #[test]
    fn rejects_shape_and_count_mismatch() {
        let mut b = HeatmapBundle::zeros(2, 3, 3, 4);
        b.right.pop();
        assert!(matches!(b.validate(), Err(TensorError::PlaneCount { .. })));
        let mut b = HeatmapBundle::zeros(2, 3, 3, 4);
        b.embed_right = Grid2D::zeros(3, 4);
        assert!(matches!(b.validate(), Err(TensorError::ShapeMismatch { plane, .. }) if plane == "embedR"));
    }
}
