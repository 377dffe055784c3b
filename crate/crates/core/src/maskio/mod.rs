//! Binary masks, their run-length codec, mask-to-label geometry, and YOLO
//! label text.

mod components;
mod contour;
mod interchange;
mod rle;
mod yolo;

use serde::{Deserialize, Serialize};

pub use components::split_components;
pub use contour::{mask_to_polygon, shoelace_area, trace_outer_contour, DEFAULT_SIMPLIFY_EPS_PX};
pub use interchange::{MaskFile, MaskFileEntry};
pub use rle::{rle_decode, rle_encode};
pub use yolo::{emit_yolo, parse_yolo, read_label_file, write_label_file};

/// Coordinate slack used when validating normalized geometry.
pub const GEOMETRY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("corrupt RLE payload: runs sum to {actual}, expected {expected}")]
    CorruptPayload { expected: u64, actual: u64 },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("invalid mask dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("category id {category_id} outside ontology of {ontology_len} names")]
    UnknownCategory { category_id: u32, ontology_len: usize },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::InvalidDimensions { width, height });
        }
        Ok(Bitmap { width, height, data: vec![false; width as usize * height as usize] })
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 || data.len() != width as usize * height as usize {
            return Err(MaskError::InvalidDimensions { width, height });
        }
        Ok(Bitmap { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: u32, col: u32) -> bool {
        self.data[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        let w = self.width as usize;
        self.data[row as usize * w + col as usize] = value;
    }

    /// Sets every pixel in the half-open rectangle, clipped to the raster.
    pub fn fill_rect(&mut self, row0: u32, col0: u32, rows: u32, cols: u32) {
        for r in row0..row0.saturating_add(rows).min(self.height) {
            for c in col0..col0.saturating_add(cols).min(self.width) {
                self.set(r, c, true);
            }
        }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }
}

/// One category-tagged segmentation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<u32>,
    pub category_id: u32,
    pub confidence: f64,
}

impl Mask {
    pub fn from_bitmap(bitmap: &Bitmap, category_id: u32, confidence: f64) -> Self {
        Mask { width: bitmap.width, height: bitmap.height, runs: rle_encode(bitmap), category_id, confidence }
    }

    pub fn decode(&self) -> Result<Bitmap, MaskError> {
        rle_decode(&self.runs, self.width, self.height)
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(MaskError::InvalidConfidence(self.confidence));
        }
        self.decode().map(|_| ())
    }
}

/// All masks produced for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub pair_id: String,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<Mask>,
    pub ontology: Vec<String>,
}

impl MaskSet {
    pub fn validate(&self) -> Result<(), MaskError> {
        for m in &self.masks {
            if m.category_id as usize >= self.ontology.len() {
                return Err(MaskError::UnknownCategory {
                    category_id: m.category_id,
                    ontology_len: self.ontology.len(),
                });
            }
            if m.width != self.width || m.height != self.height {
                return Err(MaskError::InvalidDimensions { width: m.width, height: m.height });
            }
            m.validate()?;
        }
        Ok(())
    }
}

/// Normalized center-format box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBoxNorm {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBoxNorm {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, MaskError> {
        Self::with_tolerance(cx, cy, w, h, GEOMETRY_TOLERANCE)
    }

    pub(crate) fn with_tolerance(cx: f64, cy: f64, w: f64, h: f64, tol: f64) -> Result<Self, MaskError> {
        let b = BBoxNorm { cx, cy, w, h };
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(MaskError::InvalidGeometry("non-finite box coordinate".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(MaskError::InvalidGeometry(format!("box extent {w}x{h} is not positive")));
        }
        let (x0, y0, x1, y1) = b.corners();
        if x0 < -tol || y0 < -tol || x1 > 1.0 + tol || y1 > 1.0 + tol {
            return Err(MaskError::InvalidGeometry(format!("box ({cx}, {cy}, {w}, {h}) leaves the unit frame")));
        }
        Ok(b)
    }

    /// Box from corner coordinates `(x0, y0)`–`(x1, y1)`.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, MaskError> {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    /// `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Normalized polygon outline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolygonNorm {
    vertices: Vec<(f64, f64)>,
}

impl PolygonNorm {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self, MaskError> {
        Self::with_tolerance(vertices, GEOMETRY_TOLERANCE)
    }

    pub(crate) fn with_tolerance(vertices: Vec<(f64, f64)>, tol: f64) -> Result<Self, MaskError> {
        if vertices.len() < 3 {
            return Err(MaskError::InvalidGeometry(format!("polygon has {} vertices", vertices.len())));
        }
        for &(x, y) in &vertices {
            if !x.is_finite() || !y.is_finite() || x < -tol || y < -tol || x > 1.0 + tol || y > 1.0 + tol {
                return Err(MaskError::InvalidGeometry(format!("vertex ({x}, {y}) leaves the unit frame")));
            }
        }
        let n = vertices.len();
        if (0..n).any(|i| vertices[i] == vertices[(i + 1) % n]) {
            return Err(MaskError::InvalidGeometry("consecutive duplicate vertices".into()));
        }
        Ok(PolygonNorm { vertices })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<(f64, f64)> {
        self.vertices
    }

    /// Absolute shoelace area.
    pub fn area(&self) -> f64 {
        shoelace_area(&self.vertices).abs()
    }

    /// Tight axis-aligned bounds `(x0, y0, x1, y1)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.vertices.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(x0, y0, x1, y1), &(x, y)| (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    BBox(BBoxNorm),
    Polygon(PolygonNorm),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub category_id: u32,
    #[serde(flatten)]
    pub geometry: Geometry,
}

/// Labels of one image. An empty record list marks a negative image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelFile {
    pub pair_id: String,
    pub records: Vec<LabelRecord>,
}

impl LabelFile {
    /// Re-checks geometry invariants, e.g. after deserializing untrusted input.
    pub fn validate(&self) -> Result<(), MaskError> {
        for rec in &self.records {
            match &rec.geometry {
                Geometry::BBox(b) => {
                    BBoxNorm::new(b.cx, b.cy, b.w, b.h)?;
                }
                Geometry::Polygon(p) => {
                    PolygonNorm::new(p.vertices.clone())?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    BBox,
    Polygon,
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bbox" => Ok(LabelMode::BBox),
            "polygon" => Ok(LabelMode::Polygon),
            other => Err(format!("unknown label mode `{other}` (expected bbox or polygon)")),
        }
    }
}

/// Tightest box around the foreground. Pixel `(r, c)` covers
/// `[c, c+1) x [r, r+1)`.
pub fn mask_to_bbox(mask: &Mask) -> Result<BBoxNorm, MaskError> {
    bitmap_bbox(&mask.decode()?)
}

pub fn bitmap_bbox(bitmap: &Bitmap) -> Result<BBoxNorm, MaskError> {
    let (mut r0, mut c0, mut r1, mut c1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    let mut any = false;
    for r in 0..bitmap.height {
        for c in 0..bitmap.width {
            if bitmap.get(r, c) {
                any = true;
                r0 = r0.min(r);
                r1 = r1.max(r);
                c0 = c0.min(c);
                c1 = c1.max(c);
            }
        }
    }
    if !any {
        return Err(MaskError::EmptyMask);
    }
    let (w, h) = (bitmap.width as f64, bitmap.height as f64);
    let x0 = c0 as f64 / w;
    let x1 = (c1 + 1) as f64 / w;
    let y0 = r0 as f64 / h;
    let y1 = (r1 + 1) as f64 / h;
    BBoxNorm::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
}

/// Result of turning a [`MaskSet`] into labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub labels: LabelFile,
    /// Components that produced no usable geometry.
    pub dropped: usize,
}

/// Converts every mask of a set into label records, one per 4-connected
/// component. Components whose geometry degenerates are dropped and counted.
pub fn masks_to_labels(set: &MaskSet, mode: LabelMode, simplify_eps_px: f64) -> Result<Conversion, MaskError> {
    set.validate()?;
    let mut records = Vec::new();
    let mut dropped = 0;
    for mask in &set.masks {
        for part in split_components(mask)? {
            let geometry = match mode {
                LabelMode::BBox => mask_to_bbox(&part).map(Geometry::BBox),
                LabelMode::Polygon => mask_to_polygon(&part, simplify_eps_px).map(Geometry::Polygon),
            };
            match geometry {
                Ok(g) if !is_degenerate(&g, set.width, set.height) => {
                    records.push(LabelRecord { category_id: part.category_id, geometry: g })
                }
                Ok(_) | Err(MaskError::InvalidGeometry(_)) => {
                    log::warn!("{}: dropping degenerate component of category {}", set.pair_id, part.category_id);
                    dropped += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Conversion { labels: LabelFile { pair_id: set.pair_id.clone(), records }, dropped })
}

/// Box or polygon bounds narrower than one pixel in either direction.
pub fn is_degenerate(geometry: &Geometry, width: u32, height: u32) -> bool {
    let (w, h) = match geometry {
        Geometry::BBox(b) => (b.w, b.h),
        Geometry::Polygon(p) => {
            let (x0, y0, x1, y1) = p.bounds();
            (x1 - x0, y1 - y0)
        }
    };
    let eps = 1e-9;
    w * width as f64 + eps < 1.0 || h * height as f64 + eps < 1.0
}
