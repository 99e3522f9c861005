//! GKTB v1: a single-file container for stacks of `f32` planes.
//!
//! Layout:
//!
//! | bytes   | content                                              |
//! |---------|------------------------------------------------------|
//! | 0..4    | magic `GKTB`                                         |
//! | 4       | version, always `1`                                  |
//! | 5..9    | header length `n`, `u32` little endian               |
//! | 9..9+n  | UTF-8 JSON header                                    |
//! | rest    | planes, `height*width` little-endian `f32` each, row-major, in header order |
//!
//! Heatmap bundles use the plane order `left, right, center, offsetL,
//! offsetR, embedL, embedR`. Depth images and masks are single-stack files
//! (plane names `depth`, `surface`, `mask`).

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{
    plane_label, Grid2D, HeatmapBundle, TensorError, PLANE_CENTER, PLANE_EMBED_LEFT,
    PLANE_EMBED_RIGHT, PLANE_LEFT, PLANE_OFFSET_LEFT, PLANE_OFFSET_RIGHT, PLANE_RIGHT,
};

pub const MAGIC: [u8; 4] = *b"GKTB";
pub const VERSION: u8 = 1;

const MAX_HEADER_LEN: u32 = 1 << 20;

#[derive(Debug, Error)]
pub enum GktbError {
    #[error("{context}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {0:?}, expected \"GKTB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported GKTB version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("plane `{0}` missing from file")]
    MissingPlane(String),
    #[error("unexpected plane layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Invalid(#[from] TensorError),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> GktbError {
    let context = context.into();
    move |source| GktbError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GktbHeader {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub downsample_ratio: u32,
    pub planes: Vec<PlaneSpec>,
}

impl GktbHeader {
    fn payload_len(&self) -> Option<usize> {
        let per_plane = self.height.checked_mul(self.width)?.checked_mul(4)?;
        let planes: usize = self
            .planes
            .iter()
            .try_fold(0usize, |acc, p| acc.checked_add(p.count))?;
        planes.checked_mul(per_plane)
    }
}

/// A named stack of planes read from or written to a GKTB file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneStack {
    pub name: String,
    pub grids: Vec<Grid2D>,
}

/// Raw file contents: header plus decoded planes, finiteness checked.
#[derive(Debug, Clone, PartialEq)]
pub struct GktbFile {
    pub header: GktbHeader,
    pub stacks: Vec<PlaneStack>,
}

impl GktbFile {
    pub fn stack(&self, name: &str) -> Option<&PlaneStack> {
        self.stacks.iter().find(|s| s.name == name)
    }

    fn take_stack(&mut self, name: &str) -> Result<Vec<Grid2D>, GktbError> {
        let pos = self
            .stacks
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| GktbError::MissingPlane(name.to_string()))?;
        Ok(std::mem::take(&mut self.stacks[pos].grids))
    }
}

/// Writes arbitrary named stacks; every grid must share `height`x`width`.
pub fn write_stacks<W: Write>(
    mut sink: W,
    num_classes: usize,
    downsample_ratio: u32,
    stacks: &[(&str, Vec<&Grid2D>)],
) -> Result<u64, GktbError> {
    let first = stacks
        .iter()
        .flat_map(|(_, g)| g.first())
        .next()
        .ok_or_else(|| GktbError::Layout("no planes to write".into()))?;
    let (height, width) = first.shape();
    for (name, grids) in stacks {
        for (i, g) in grids.iter().enumerate() {
            if g.shape() != (height, width) {
                return Err(TensorError::ShapeMismatch {
                    plane: plane_label(name, i, grids.len()),
                    expected: (height, width),
                    actual: g.shape(),
                }
                .into());
            }
        }
    }
    let header = GktbHeader {
        num_classes,
        height,
        width,
        downsample_ratio,
        planes: stacks
            .iter()
            .map(|(name, grids)| PlaneSpec {
                name: name.to_string(),
                count: grids.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| GktbError::Header(e.to_string()))?;
    let header_len =
        u32::try_from(json.len()).map_err(|_| GktbError::Header("header too large".into()))?;

    let mut bytes = Vec::with_capacity(9 + json.len() + header.payload_len().unwrap_or(0));
    bytes.extend_from_slice(&MAGIC);
    bytes.push(VERSION);
    bytes.extend_from_slice(&header_len.to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, grids) in stacks {
        for g in grids {
            for v in g.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    sink.write_all(&bytes).map_err(io_err("writing GKTB stream"))?;
    sink.flush().map_err(io_err("flushing GKTB stream"))?;
    Ok(bytes.len() as u64)
}

/// Parses a GKTB stream without interpreting plane names.
pub fn read_stacks<R: Read>(mut source: R) -> Result<GktbFile, GktbError> {
    let mut prefix = [0u8; 9];
    source
        .read_exact(&mut prefix)
        .map_err(io_err("reading GKTB preamble"))?;
    let magic: [u8; 4] = prefix[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(GktbError::BadMagic(magic));
    }
    if prefix[4] != VERSION {
        return Err(GktbError::UnsupportedVersion(prefix[4]));
    }
    let header_len = u32::from_le_bytes(prefix[5..9].try_into().unwrap());
    if header_len > MAX_HEADER_LEN {
        return Err(GktbError::Header(format!(
            "header length {header_len} exceeds limit"
        )));
    }
    let mut json = vec![0u8; header_len as usize];
    source
        .read_exact(&mut json)
        .map_err(io_err("reading GKTB header"))?;
    let header: GktbHeader =
        serde_json::from_slice(&json).map_err(|e| GktbError::Header(e.to_string()))?;
    if header.height == 0 || header.width == 0 {
        return Err(TensorError::EmptyDimension {
            height: header.height,
            width: header.width,
        }
        .into());
    }
    let expected = header
        .payload_len()
        .ok_or_else(|| GktbError::Header("declared payload overflows".into()))?;

    let mut payload = Vec::with_capacity(expected.min(1 << 28));
    source
        .take(expected as u64 + 1)
        .read_to_end(&mut payload)
        .map_err(io_err("reading GKTB payload"))?;
    if payload.len() != expected {
        return Err(GktbError::PayloadLength {
            expected,
            actual: payload.len(),
        });
    }

    let plane_len = header.height * header.width;
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut stacks = Vec::with_capacity(header.planes.len());
    for spec in &header.planes {
        let mut grids = Vec::with_capacity(spec.count);
        for i in 0..spec.count {
            let data: Vec<f32> = floats.by_ref().take(plane_len).collect();
            if let Some(index) = data.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    plane: plane_label(&spec.name, i, spec.count),
                    index,
                }
                .into());
            }
            grids.push(Grid2D::from_vec(header.height, header.width, data)?);
        }
        stacks.push(PlaneStack {
            name: spec.name.clone(),
            grids,
        });
    }
    Ok(GktbFile { header, stacks })
}

/// Serializes a bundle in canonical plane order. Returns the byte count.
pub fn write_bundle<W: Write>(bundle: &HeatmapBundle, sink: W) -> Result<u64, GktbError> {
    bundle.validate()?;
    write_stacks(
        sink,
        bundle.num_classes,
        bundle.downsample_ratio,
        &bundle.named_stacks(),
    )
}

/// Parses and validates a bundle.
pub fn read_bundle<R: Read>(source: R) -> Result<HeatmapBundle, GktbError> {
    let mut file = read_stacks(source)?;
    let canonical = [
        PLANE_LEFT,
        PLANE_RIGHT,
        PLANE_CENTER,
        PLANE_OFFSET_LEFT,
        PLANE_OFFSET_RIGHT,
        PLANE_EMBED_LEFT,
        PLANE_EMBED_RIGHT,
    ];
    let names: Vec<&str> = file.header.planes.iter().map(|p| p.name.as_str()).collect();
    if names != canonical {
        return Err(GktbError::Layout(format!(
            "expected planes {canonical:?}, found {names:?}"
        )));
    }
    let expect = |name: &str, grids: &Vec<Grid2D>, n: usize| -> Result<(), GktbError> {
        if grids.len() != n {
            return Err(TensorError::PlaneCount {
                plane: name.to_string(),
                expected: n,
                actual: grids.len(),
            }
            .into());
        }
        Ok(())
    };
    let num_classes = file.header.num_classes;
    let left = file.take_stack(PLANE_LEFT)?;
    expect(PLANE_LEFT, &left, num_classes)?;
    let right = file.take_stack(PLANE_RIGHT)?;
    expect(PLANE_RIGHT, &right, num_classes)?;
    let single = |file: &mut GktbFile, name: &str| -> Result<Grid2D, GktbError> {
        let g = file.take_stack(name)?;
        expect(name, &g, 1)?;
        Ok(g.into_iter().next().unwrap())
    };
    let pair = |file: &mut GktbFile, name: &str| -> Result<[Grid2D; 2], GktbError> {
        let g = file.take_stack(name)?;
        expect(name, &g, 2)?;
        let mut it = g.into_iter();
        Ok([it.next().unwrap(), it.next().unwrap()])
    };
    let center = single(&mut file, PLANE_CENTER)?;
    let offset_left = pair(&mut file, PLANE_OFFSET_LEFT)?;
    let offset_right = pair(&mut file, PLANE_OFFSET_RIGHT)?;
    let embed_left = single(&mut file, PLANE_EMBED_LEFT)?;
    let embed_right = single(&mut file, PLANE_EMBED_RIGHT)?;
    let bundle = HeatmapBundle {
        left,
        right,
        center,
        offset_left,
        offset_right,
        embed_left,
        embed_right,
        num_classes,
        downsample_ratio: file.header.downsample_ratio,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Writes one or more single-channel planes (`depth`, `mask`, ...).
pub fn write_planes<W: Write>(sink: W, planes: &[(&str, &Grid2D)]) -> Result<u64, GktbError> {
    let stacks: Vec<(&str, Vec<&Grid2D>)> = planes.iter().map(|(n, g)| (*n, vec![*g])).collect();
    write_stacks(sink, 0, 1, &stacks)
}

/// Reads the single-channel plane `name` from a GKTB stream.
pub fn read_plane<R: Read>(source: R, name: &str) -> Result<Grid2D, GktbError> {
    let mut file = read_stacks(source)?;
    let grids = file.take_stack(name)?;
    if grids.len() != 1 {
        return Err(TensorError::PlaneCount {
            plane: name.to_string(),
            expected: 1,
            actual: grids.len(),
        }
        .into());
    }
    Ok(grids.into_iter().next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bytes_of(bundle: &HeatmapBundle) -> Vec<u8> {
        let mut out = Vec::new();
        write_bundle(bundle, &mut out).unwrap();
        out
    }

    #[test]
    fn header_declares_class_stack() {
        let b = HeatmapBundle::zeros(18, 57, 57, 4);
        let bytes = bytes_of(&b);
        let file = read_stacks(&bytes[..]).unwrap();
        assert_eq!(file.header.num_classes, 18);
        assert_eq!((file.header.height, file.header.width), (57, 57));
        assert_eq!(file.header.planes[0], PlaneSpec { name: "left".into(), count: 18 });
        let names: Vec<_> = file.header.planes.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["left", "right", "center", "offsetL", "offsetR", "embedL", "embedR"]);
    }

    #[test]
    fn unit_bundle_round_trips() {
        let b = HeatmapBundle::zeros(1, 1, 1, 1);
        let bytes = bytes_of(&b);
        // 9 preamble + header + 9 planes of one f32
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), 9 + header_len + 9 * 4);
        assert_eq!(read_bundle(&bytes[..]).unwrap(), b);
    }

    #[test]
    fn byte_count_matches_stream() {
        let b = HeatmapBundle::zeros(2, 4, 5, 4);
        let mut out = Vec::new();
        let n = write_bundle(&b, &mut out).unwrap();
        assert_eq!(n as usize, out.len());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = bytes_of(&HeatmapBundle::zeros(1, 2, 2, 4));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_bundle(&bad[..]), Err(GktbError::BadMagic(_))));
        bytes[4] = 2;
        assert!(matches!(read_bundle(&bytes[..]), Err(GktbError::UnsupportedVersion(2))));
    }

    #[test]
    fn rejects_truncated_and_trailing_payload() {
        let bytes = bytes_of(&HeatmapBundle::zeros(1, 2, 2, 4));
        let short = &bytes[..bytes.len() - 3];
        assert!(matches!(read_bundle(short), Err(GktbError::PayloadLength { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(read_bundle(&long[..]), Err(GktbError::PayloadLength { .. })));
    }

    #[test]
    fn rejects_out_of_range_value_on_load() {
        let b = HeatmapBundle::zeros(2, 2, 2, 4);
        let mut bytes = bytes_of(&b);
        let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let at = 9 + header_len; // first value of left[0]
        bytes[at..at + 4].copy_from_slice(&1.5f32.to_le_bytes());
        match read_bundle(&bytes[..]) {
            Err(GktbError::Invalid(TensorError::OutOfRange { plane, value, .. })) => {
                assert_eq!(plane, "left[0]");
                assert_eq!(value, 1.5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_nan_payload() {
        let b = HeatmapBundle::zeros(1, 2, 2, 4);
        let mut bytes = bytes_of(&b);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        match read_bundle(&bytes[..]) {
            Err(GktbError::Invalid(TensorError::NonFinite { plane, index })) => {
                assert_eq!(plane, "embedR");
                assert_eq!(index, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_noncanonical_layout() {
        let g = Grid2D::zeros(2, 2);
        let mut bytes = Vec::new();
        write_planes(&mut bytes, &[("depth", &g)]).unwrap();
        assert!(matches!(read_bundle(&bytes[..]), Err(GktbError::Layout(_))));
    }

    #[test]
    fn rejects_class_count_mismatch() {
        let b = HeatmapBundle::zeros(2, 2, 2, 4);
        let stacks = b.named_stacks();
        let mut bytes = Vec::new();
        write_stacks(&mut bytes, 3, 4, &stacks).unwrap();
        assert!(matches!(
            read_bundle(&bytes[..]),
            Err(GktbError::Invalid(TensorError::PlaneCount { .. }))
        ));
    }

    #[test]
    fn single_plane_round_trip() {
        let g = Grid2D::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut bytes = Vec::new();
        write_planes(&mut bytes, &[("depth", &g)]).unwrap();
        assert_eq!(read_plane(&bytes[..], "depth").unwrap(), g);
        assert!(matches!(read_plane(&bytes[..], "mask"), Err(GktbError::MissingPlane(_))));
    }

    #[test]
    fn write_rejects_invalid_bundle() {
        let mut b = HeatmapBundle::zeros(1, 2, 2, 4);
        b.center.set(0, 0, -0.5);
        assert!(write_bundle(&b, Vec::new()).is_err());
    }
}
