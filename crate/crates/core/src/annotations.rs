//! JSON-lines grasp records: `{"x","y","theta_deg","w","h"}` with an
//! optional `image_id`. Angles are degrees on disk and radians in memory.
//!
//! A line holding only an `image_id` declares an image with no grasps.
//! Blank lines and lines with a top-level `metadata` key are skipped.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Grasp};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: record needs all of x, y, theta_deg and w, or none of them")]
    Incomplete { line: usize },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("reading annotations: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default)]
    pub x: Option<f64>,
    #[serde(default)]
    pub y: Option<f64>,
    #[serde(default)]
    pub theta_deg: Option<f64>,
    #[serde(default)]
    pub w: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
}

impl AnnotationRecord {
    pub fn from_grasp<T: Scalar>(grasp: &Grasp<T>, image_id: Option<&str>) -> Self {
        Self {
            image_id: image_id.map(str::to_string),
            x: Some(grasp.x.as_f64()),
            y: Some(grasp.y.as_f64()),
            theta_deg: Some(grasp.theta.as_f64().to_degrees()),
            w: Some(grasp.w.as_f64()),
            h: grasp.h.map(Scalar::as_f64),
        }
    }
}

/// One parsed line; `grasp` is `None` for an image marker.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationLine<T> {
    pub line: usize,
    pub image_id: Option<String>,
    pub grasp: Option<Grasp<T>>,
}

pub fn parse_line<T: Scalar>(text: &str, line: usize) -> Result<Option<AnnotationLine<T>>, AnnotationError> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let value: serde_json::Value = serde_json::from_str(trimmed).map_err(|source| AnnotationError::Json { line, source })?;
    if value.get("metadata").is_some() {
        return Ok(None);
    }
    let rec: AnnotationRecord = serde_json::from_value(value).map_err(|source| AnnotationError::Json { line, source })?;
    let grasp = match (rec.x, rec.y, rec.theta_deg, rec.w) {
        (Some(x), Some(y), Some(t), Some(w)) => Some(
            Grasp::with_folded_angle(T::lit(x), T::lit(y), T::lit(t.to_radians()), T::lit(w), rec.h.map(T::lit))
                .map_err(|source| AnnotationError::Invalid { line, source })?,
        ),
        (None, None, None, None) if rec.h.is_none() && rec.image_id.is_some() => None,
        _ => return Err(AnnotationError::Incomplete { line }),
    };
    Ok(Some(AnnotationLine {
        line,
        image_id: rec.image_id,
        grasp,
    }))
}

/// All records in file order; line numbers start at 1.
pub fn read_lines<T: Scalar, R: BufRead>(reader: R) -> Result<Vec<AnnotationLine<T>>, AnnotationError> {
    let mut out = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        if let Some(l) = parse_line(&text?, i + 1)? {
            out.push(l);
        }
    }
    Ok(out)
}

/// Grasps in file order, ignoring image ids.
pub fn read_grasps<T: Scalar, R: BufRead>(reader: R) -> Result<Vec<Grasp<T>>, AnnotationError> {
    Ok(read_lines(reader)?.into_iter().filter_map(|l| l.grasp).collect())
}

/// Grasps keyed by image; records without an id go to `default_id`.
/// Order within an image is file order.
pub fn group_by_image<T: Scalar>(lines: Vec<AnnotationLine<T>>, default_id: &str) -> BTreeMap<String, Vec<Grasp<T>>> {
    let mut map: BTreeMap<String, Vec<Grasp<T>>> = BTreeMap::new();
    for l in lines {
        let entry = map.entry(l.image_id.unwrap_or_else(|| default_id.to_string())).or_default();
        if let Some(g) = l.grasp {
            entry.push(g);
        }
    }
    map
}

pub fn write_grasps<T: Scalar, W: Write>(mut sink: W, grasps: &[Grasp<T>], image_id: Option<&str>) -> io::Result<()> {
    for g in grasps {
        let rec = AnnotationRecord::from_grasp(g, image_id);
        serde_json::to_writer(&mut sink, &rec)?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_degrees_and_null_height() {
        let text = r#"{"x":10,"y":20,"theta_deg":90,"w":30,"h":null}
{"x":1,"y":2,"theta_deg":-45,"w":3,"h":4}
"#;
        let g: Vec<Grasp<f64>> = read_grasps(text.as_bytes()).unwrap();
        assert_eq!(g.len(), 2);
        assert!((g[0].theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(g[0].h, None);
        assert_eq!(g[1].h, Some(4.0));
    }

    #[test]
    fn angles_fold() {
        let g: Vec<Grasp<f64>> = read_grasps(r#"{"x":1,"y":1,"theta_deg":135,"w":3}"#.as_bytes()).unwrap();
        assert!((g[0].theta + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn markers_and_metadata() {
        let text = r#"{"metadata":{"profile":"ajd"}}

{"image_id":"a"}
{"image_id":"b","x":1,"y":1,"theta_deg":0,"w":3}
{"x":5,"y":5,"theta_deg":0,"w":3}
"#;
        let map = group_by_image(read_lines::<f64, _>(text.as_bytes()).unwrap(), "file");
        assert_eq!(map["a"].len(), 0);
        assert_eq!(map["b"].len(), 1);
        assert_eq!(map["file"].len(), 1);
    }

    #[test]
    fn errors_name_the_line() {
        let bad = "{\"x\":1,\"y\":1,\"w\":3}\n";
        assert!(matches!(read_grasps::<f64, _>(bad.as_bytes()), Err(AnnotationError::Incomplete { line: 1 })));
        let neg = "\n{\"x\":1,\"y\":1,\"theta_deg\":0,\"w\":-3}\n";
        assert!(matches!(read_grasps::<f64, _>(neg.as_bytes()), Err(AnnotationError::Invalid { line: 2, .. })));
        assert!(matches!(read_grasps::<f64, _>("nope".as_bytes()), Err(AnnotationError::Json { line: 1, .. })));
    }

    #[test]
    fn write_read_round_trip() {
        let gs = vec![
            Grasp::new(10.5, 3.25, 0.3, 12.0, Some(5.0)).unwrap(),
            Grasp::new(1.0, 2.0, -1.2, 4.0, None).unwrap(),
        ];
        let mut buf = Vec::new();
        write_grasps(&mut buf, &gs, Some("img")).unwrap();
        let back: Vec<Grasp<f64>> = read_grasps(buf.as_slice()).unwrap();
        for (a, b) in gs.iter().zip(&back) {
            assert!((a.theta - b.theta).abs() < 1e-12);
            assert_eq!((a.x, a.y, a.w, a.h), (b.x, b.y, b.w, b.h));
        }
    }
}
