use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{BBoxNorm, Geometry, LabelFile, LabelMode, LabelRecord, MaskError, PolygonNorm};
use crate::{Error, Result};

/// Parsed values may sit this far outside the unit frame; emitted text is
/// rounded to 6 decimals, so exact re-validation would reject our own output.
const PARSE_TOLERANCE: f64 = 1e-6;

/// Renders YOLO label text: `<cls> <cx> <cy> <w> <h>` per box or
/// `<cls> <x1> <y1> ... <xn> <yn>` per polygon. Boxes are written as
/// their corner polygon in polygon mode and polygons as their bounds in
/// box mode.
pub fn emit_yolo(labels: &LabelFile, mode: LabelMode) -> String {
    let mut out = String::new();
    for rec in &labels.records {
        write!(out, "{}", rec.category_id).unwrap();
        match (mode, &rec.geometry) {
            (LabelMode::BBox, Geometry::BBox(b)) => write_box(&mut out, b),
            (LabelMode::BBox, Geometry::Polygon(p)) => {
                let (x0, y0, x1, y1) = p.bounds();
                write_box(&mut out, &BBoxNorm { cx: (x0 + x1) / 2.0, cy: (y0 + y1) / 2.0, w: x1 - x0, h: y1 - y0 });
            }
            (LabelMode::Polygon, Geometry::Polygon(p)) => {
                for (x, y) in p.vertices() {
                    write!(out, " {x:.6} {y:.6}").unwrap();
                }
            }
            (LabelMode::Polygon, Geometry::BBox(b)) => {
                let (x0, y0, x1, y1) = b.corners();
                for (x, y) in [(x0, y0), (x1, y0), (x1, y1), (x0, y1)] {
                    write!(out, " {x:.6} {y:.6}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    out
}

fn write_box(out: &mut String, b: &BBoxNorm) {
    write!(out, " {:.6} {:.6} {:.6} {:.6}", b.cx, b.cy, b.w, b.h).unwrap();
}

pub fn parse_yolo(pair_id: &str, text: &str, mode: LabelMode) -> Result<LabelFile, MaskError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let err = |message: String| MaskError::Parse { line: line_no, message };
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        match mode {
            LabelMode::BBox if tokens.len() != 5 => {
                return Err(err(format!("expected 5 fields, found {}", tokens.len())))
            }
            LabelMode::Polygon if tokens.len() < 7 || tokens.len().is_multiple_of(2) => {
                return Err(err(format!("expected an odd field count >= 7, found {}", tokens.len())))
            }
            _ => {}
        }
        let category_id =
            tokens[0].parse::<u32>().map_err(|_| err(format!("bad category id `{}`", tokens[0])))?;
        let coords = tokens[1..]
            .iter()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(format!("non-numeric token `{t}`"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if let Some(v) = coords.iter().find(|v| **v < -PARSE_TOLERANCE || **v > 1.0 + PARSE_TOLERANCE) {
            return Err(err(format!("coordinate {v} outside [0, 1]")));
        }
        let geometry = match mode {
            LabelMode::BBox => {
                BBoxNorm::with_tolerance(coords[0], coords[1], coords[2], coords[3], PARSE_TOLERANCE).map(Geometry::BBox)
            }
            LabelMode::Polygon => {
                let vertices = coords.chunks_exact(2).map(|c| (c[0], c[1])).collect();
                PolygonNorm::with_tolerance(vertices, PARSE_TOLERANCE).map(Geometry::Polygon)
            }
        }
        .map_err(|e| err(e.to_string()))?;
        records.push(LabelRecord { category_id, geometry });
    }
    Ok(LabelFile { pair_id: pair_id.to_string(), records })
}

/// Reads `<path>` as YOLO text; the pair id is the file stem.
pub fn read_label_file(path: &Path, mode: LabelMode) -> Result<LabelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_yolo(stem, &text, mode).map_err(|e| match e {
        MaskError::Parse { line, message } => {
            MaskError::Parse { line, message: format!("{}: {message}", path.display()) }.into()
        }
        other => other.into(),
    })
}

pub fn write_label_file(path: &Path, labels: &LabelFile, mode: LabelMode) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, emit_yolo(labels, mode)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bbox(cx: f64, cy: f64, w: f64, h: f64) -> Geometry {
        Geometry::BBox(BBoxNorm::new(cx, cy, w, h).unwrap())
    }

    #[test]
    fn emit_examples() {
        let f = LabelFile { pair_id: "a".into(), records: vec![LabelRecord { category_id: 1, geometry: bbox(0.5, 0.5, 0.25, 0.25) }] };
        assert_eq!(emit_yolo(&f, LabelMode::BBox), "1 0.500000 0.500000 0.250000 0.250000\n");
        assert_eq!(emit_yolo(&LabelFile::default(), LabelMode::BBox), "");
        let tri = PolygonNorm::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        let f = LabelFile { pair_id: "a".into(), records: vec![LabelRecord { category_id: 0, geometry: Geometry::Polygon(tri) }] };
        assert_eq!(emit_yolo(&f, LabelMode::Polygon), "0 0.000000 0.000000 1.000000 0.000000 0.000000 1.000000\n");
    }

    #[test]
    fn parse_examples() {
        let f = parse_yolo("a", "1 0.5 0.5 0.25 0.25", LabelMode::BBox).unwrap();
        assert_eq!(f.records.len(), 1);
        assert_eq!(f.records[0].geometry, bbox(0.5, 0.5, 0.25, 0.25));
        match parse_yolo("a", "1 0.5 0.5 0.25", LabelMode::BBox) {
            Err(MaskError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "0 0.5 0.5 0.1 0.1\n\n1 0.5 x 0.1 0.1\n";
        assert!(matches!(parse_yolo("a", text, LabelMode::BBox), Err(MaskError::Parse { line: 3, .. })));
        assert!(matches!(parse_yolo("a", "0 1.5 0.5 0.1 0.1", LabelMode::BBox), Err(MaskError::Parse { line: 1, .. })));
        assert!(matches!(parse_yolo("a", "0 0.1 0.1 0.2 0.2 0.3", LabelMode::Polygon), Err(MaskError::Parse { .. })));
        assert!(matches!(parse_yolo("a", "0 0.1 0.1 0.2 0.2 0.3 0.3 0.4", LabelMode::Polygon), Err(MaskError::Parse { .. })));
        assert!(matches!(parse_yolo("a", "-1 0.5 0.5 0.1 0.1", LabelMode::BBox), Err(MaskError::Parse { .. })));
    }

    #[test]
    fn cross_mode_emission() {
        let f = LabelFile { pair_id: "a".into(), records: vec![LabelRecord { category_id: 0, geometry: bbox(0.5, 0.5, 0.5, 0.5) }] };
        let poly = parse_yolo("a", &emit_yolo(&f, LabelMode::Polygon), LabelMode::Polygon).unwrap();
        match &poly.records[0].geometry {
            Geometry::Polygon(p) => assert_eq!(p.vertices().len(), 4),
            g => panic!("unexpected {g:?}"),
        }
        let back = parse_yolo("a", &emit_yolo(&poly, LabelMode::BBox), LabelMode::BBox).unwrap();
        assert_eq!(back.records[0].geometry, bbox(0.5, 0.5, 0.5, 0.5));
    }

    fn arb_bbox() -> impl Strategy<Value = Geometry> {
        (0.0f64..0.99, 0.0f64..0.99, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(x0, y0, fw, fh)| {
            let x1 = x0 + (1.0 - x0) * fw.max(0.01);
            let y1 = y0 + (1.0 - y0) * fh.max(0.01);
            Geometry::BBox(BBoxNorm::from_corners(x0, y0, x1.min(1.0), y1.min(1.0)).unwrap())
        })
    }

    proptest! {
        #[test]
        fn bbox_round_trip(geoms in prop::collection::vec((0u32..5, arb_bbox()), 0..12)) {
            let f = LabelFile {
                pair_id: "p".into(),
                records: geoms.into_iter().map(|(c, g)| LabelRecord { category_id: c, geometry: g }).collect(),
            };
            let back = parse_yolo("p", &emit_yolo(&f, LabelMode::BBox), LabelMode::BBox).unwrap();
            prop_assert_eq!(back.records.len(), f.records.len());
            for (a, b) in f.records.iter().zip(&back.records) {
                prop_assert_eq!(a.category_id, b.category_id);
                let (Geometry::BBox(a), Geometry::BBox(b)) = (&a.geometry, &b.geometry) else { unreachable!() };
                prop_assert!((a.cx - b.cx).abs() <= 1e-6 && (a.cy - b.cy).abs() <= 1e-6);
                prop_assert!((a.w - b.w).abs() <= 1e-6 && (a.h - b.h).abs() <= 1e-6);
            }
        }
    }
}
