//! Transfer of RGB-derived labels onto paired multispectral frames, with an
//! optional pixel-space affine correction between sensor frames.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{FramePair, SensorProfile};
use crate::maskio::{self, BBoxNorm, Geometry, LabelFile, LabelMode, LabelRecord, MaskSet, PolygonNorm};
use crate::{Band, Error, Result};

/// Determinants at or below this magnitude are treated as singular.
const SINGULAR_DET: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransferError {
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("need at least 3 correspondences, got {0}")]
    InsufficientData(usize),
    #[error("degenerate geometry: source points are collinear or coincident")]
    DegenerateGeometry,
    #[error("mask sets without a matching frame pair: {}", .0.join(", "))]
    OrphanMasks(Vec<String>),
}

/// Maps source pixel `(x, y)` to `(a*x + b*y + c, d*x + e*y + f)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCal {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineCal {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Result<Self, TransferError> {
        let cal = AffineCal { a, b, c, d, e, f };
        if ![a, b, c, d, e, f].iter().all(|v| v.is_finite()) {
            return Err(TransferError::InvalidCalibration("non-finite coefficient".into()));
        }
        if cal.determinant().abs() <= SINGULAR_DET {
            return Err(TransferError::InvalidCalibration(format!("determinant {} is singular", cal.determinant())));
        }
        Ok(cal)
    }

    pub fn from_coefficients(c: [f64; 6]) -> Result<Self, TransferError> {
        Self::new(c[0], c[1], c[2], c[3], c[4], c[5])
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    pub const fn identity() -> Self {
        AffineCal { a: 1.0, b: 0.0, c: 0.0, d: 0.0, e: 1.0, f: 0.0 }
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.e - self.b * self.d
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.a * x + self.b * y + self.c, self.d * x + self.e * y + self.f)
    }

    /// Analytic inverse via the 2x2 adjugate.
    pub fn inverse(&self) -> Result<Self, TransferError> {
        let det = self.determinant();
        if det.abs() <= SINGULAR_DET {
            return Err(TransferError::InvalidCalibration(format!("determinant {det} is singular")));
        }
        let (a, b, d, e) = (self.e / det, -self.b / det, -self.d / det, self.a / det);
        Self::new(a, b, -(a * self.c + b * self.f), d, e, -(d * self.c + e * self.f))
    }

    /// `other ∘ self`: apply `self` first.
    pub fn then(&self, other: &AffineCal) -> AffineCal {
        AffineCal {
            a: other.a * self.a + other.b * self.d,
            b: other.a * self.b + other.b * self.e,
            c: other.a * self.c + other.b * self.f + other.c,
            d: other.d * self.a + other.e * self.d,
            e: other.d * self.b + other.e * self.e,
            f: other.d * self.c + other.e * self.f + other.f,
        }
    }
}

pub fn apply_affine(cal: &AffineCal, p: (f64, f64)) -> (f64, f64) {
    cal.apply(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub src: (f64, f64),
    pub dst: (f64, f64),
}

/// Least-squares affine fit minimising squared target residuals.
///
/// Coordinates are centred on the source/target means before solving, which
/// keeps the normal equations well conditioned at sensor-scale pixel values.
pub fn fit_affine(points: &[Correspondence]) -> Result<AffineCal, TransferError> {
    if points.len() < 3 {
        return Err(TransferError::InsufficientData(points.len()));
    }
    let n = points.len() as f64;
    let (msx, msy, mdx, mdy) = points.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, p| {
        (acc.0 + p.src.0 / n, acc.1 + p.src.1 / n, acc.2 + p.dst.0 / n, acc.3 + p.dst.1 / n)
    });
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    let (mut ux_x, mut ux_y, mut uy_x, mut uy_y) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let (x, y) = (p.src.0 - msx, p.src.1 - msy);
        let (u, v) = (p.dst.0 - mdx, p.dst.1 - mdy);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        ux_x += u * x;
        ux_y += u * y;
        uy_x += v * x;
        uy_y += v * y;
    }
    let det = sxx * syy - sxy * sxy;
    let scale = (sxx + syy) * (sxx + syy);
    if det.is_nan() || det <= 1e-12 * scale || scale == 0.0 {
        return Err(TransferError::DegenerateGeometry);
    }
    // [sxx sxy; sxy syy] [a; b] = [ux_x; ux_y]
    let a = (ux_x * syy - ux_y * sxy) / det;
    let b = (ux_y * sxx - ux_x * sxy) / det;
    let d = (uy_x * syy - uy_y * sxy) / det;
    let e = (uy_y * sxx - uy_x * sxy) / det;
    let c = mdx - a * msx - b * msy;
    let f = mdy - d * msx - e * msy;
    AffineCal::new(a, b, c, d, e, f).map_err(|_| TransferError::DegenerateGeometry)
}

/// Labels after transfer, with the count of records clipped away.
#[derive(Debug, Clone, PartialEq)]
pub struct Transferred {
    pub labels: LabelFile,
    pub dropped: usize,
}

/// Moves labels normalized to `src` into the frame of `dst`.
///
/// Without a calibration the labels are returned unchanged: normalized
/// coordinates are resolution independent for co-registered frames. With one,
/// geometry is denormalized to source pixels, mapped, renormalized to the
/// target frame and clipped to it; records that clip to nothing are dropped.
pub fn transfer_labels(
    labels: &LabelFile,
    src: &SensorProfile,
    dst: &SensorProfile,
    cal: Option<&AffineCal>,
) -> Result<Transferred, TransferError> {
    let Some(cal) = cal else {
        return Ok(Transferred { labels: labels.clone(), dropped: 0 });
    };
    if cal.determinant().abs() <= SINGULAR_DET || !cal.coefficients().iter().all(|v| v.is_finite()) {
        return Err(TransferError::InvalidCalibration(format!("determinant {} is singular", cal.determinant())));
    }
    let (sw, sh) = (src.width_px as f64, src.height_px as f64);
    let (dw, dh) = (dst.width_px as f64, dst.height_px as f64);
    let map = |(x, y): (f64, f64)| {
        let (px, py) = cal.apply((x * sw, y * sh));
        (px / dw, py / dh)
    };

    let mut records = Vec::with_capacity(labels.records.len());
    let mut dropped = 0;
    for rec in &labels.records {
        let geometry = match &rec.geometry {
            Geometry::BBox(b) => transfer_bbox(b, map),
            Geometry::Polygon(p) => transfer_polygon(p, map, cal.determinant() < 0.0),
        };
        match geometry {
            Some(g) => records.push(LabelRecord { category_id: rec.category_id, geometry: g }),
            None => dropped += 1,
        }
    }
    Ok(Transferred { labels: LabelFile { pair_id: labels.pair_id.clone(), records }, dropped })
}

fn transfer_bbox(b: &BBoxNorm, map: impl Fn((f64, f64)) -> (f64, f64)) -> Option<Geometry> {
    let (x0, y0, x1, y1) = b.corners();
    let mapped = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].map(map);
    let lo_x = mapped.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).clamp(0.0, 1.0);
    let hi_x = mapped.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0);
    let lo_y = mapped.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).clamp(0.0, 1.0);
    let hi_y = mapped.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0);
    if hi_x <= lo_x || hi_y <= lo_y {
        return None;
    }
    BBoxNorm::from_corners(lo_x, lo_y, hi_x, hi_y).ok().map(Geometry::BBox)
}

fn transfer_polygon(p: &PolygonNorm, map: impl Fn((f64, f64)) -> (f64, f64), reflects: bool) -> Option<Geometry> {
    let mut pts: Vec<(f64, f64)> = p.vertices().iter().copied().map(map).collect();
    if reflects {
        pts.reverse();
    }
    let mut clipped = clip_to_unit_square(&pts);
    clipped.dedup();
    while clipped.len() > 1 && clipped.first() == clipped.last() {
        clipped.pop();
    }
    if clipped.len() < 3 || maskio::shoelace_area(&clipped).abs() < 1e-15 {
        return None;
    }
    PolygonNorm::new(clipped).ok().map(Geometry::Polygon)
}

/// Sutherland–Hodgman clip against `[0, 1]^2`.
fn clip_to_unit_square(poly: &[(f64, f64)]) -> Vec<(f64, f64)> {
    type Edge = (fn((f64, f64)) -> bool, fn((f64, f64), (f64, f64)) -> (f64, f64));
    fn lerp_x(p: (f64, f64), q: (f64, f64), x: f64) -> (f64, f64) {
        let t = (x - p.0) / (q.0 - p.0);
        (x, p.1 + t * (q.1 - p.1))
    }
    fn lerp_y(p: (f64, f64), q: (f64, f64), y: f64) -> (f64, f64) {
        let t = (y - p.1) / (q.1 - p.1);
        (p.0 + t * (q.0 - p.0), y)
    }
    let edges: [Edge; 4] = [
        (|p| p.0 >= 0.0, |p, q| lerp_x(p, q, 0.0)),
        (|p| p.0 <= 1.0, |p, q| lerp_x(p, q, 1.0)),
        (|p| p.1 >= 0.0, |p, q| lerp_y(p, q, 0.0)),
        (|p| p.1 <= 1.0, |p, q| lerp_y(p, q, 1.0)),
    ];
    let mut out = poly.to_vec();
    for (inside, cross) in edges {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let mut prev = *input.last().unwrap();
        for &cur in &input {
            match (inside(prev), inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(cross(prev, cur)),
                (false, true) => {
                    out.push(cross(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
            prev = cur;
        }
    }
    out
}

/// Options for [`transfer_batch`].
#[derive(Debug, Clone, Default)]
pub struct TransferOptions {
    pub mode: LabelMode,
    pub simplify_eps_px: f64,
    /// Per target band; bands without an entry use pure normalized transfer.
    pub calibrations: BTreeMap<Band, AffineCal>,
    /// Target frame sizes; defaults to the stock sensor profiles.
    pub profiles: BTreeMap<Band, SensorProfile>,
}

impl TransferOptions {
    pub fn new(mode: LabelMode) -> Self {
        TransferOptions { mode, simplify_eps_px: maskio::DEFAULT_SIMPLIFY_EPS_PX, ..Default::default() }
    }
}

/// Counters for one batch run. Merging is associative.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferReport {
    pub pairs: usize,
    pub masksets: usize,
    /// Label records written across all bands.
    pub records: usize,
    /// Mask components that produced no usable geometry.
    pub conversion_dropped: usize,
    /// Records clipped away per target band.
    pub clipped_dropped: BTreeMap<Band, usize>,
}

impl TransferReport {
    pub fn merge(mut self, other: TransferReport) -> TransferReport {
        self.pairs += other.pairs;
        self.masksets += other.masksets;
        self.records += other.records;
        self.conversion_dropped += other.conversion_dropped;
        for (band, n) in other.clipped_dropped {
            *self.clipped_dropped.entry(band).or_default() += n;
        }
        self
    }

    pub fn total_dropped(&self) -> usize {
        self.conversion_dropped + self.clipped_dropped.values().sum::<usize>()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTransfer {
    /// Label files per band, in pair order.
    pub labels: BTreeMap<Band, Vec<LabelFile>>,
    pub report: TransferReport,
}

/// Converts each pair's masks to labels and fans them out to every band of
/// the pair. Pairs without a mask set receive empty label files.
pub fn transfer_batch(pairs: &[FramePair], masksets: &[MaskSet], opts: &TransferOptions) -> Result<BatchTransfer> {
    let by_id: HashMap<&str, &MaskSet> = masksets.iter().map(|m| (m.pair_id.as_str(), m)).collect();
    let known: std::collections::HashSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    let mut orphans: Vec<String> =
        masksets.iter().filter(|m| !known.contains(m.pair_id.as_str())).map(|m| m.pair_id.clone()).collect();
    if !orphans.is_empty() {
        orphans.sort();
        orphans.dedup();
        return Err(TransferError::OrphanMasks(orphans).into());
    }
    for cal in opts.calibrations.values() {
        if cal.determinant().abs() <= SINGULAR_DET {
            return Err(TransferError::InvalidCalibration(format!("determinant {} is singular", cal.determinant())).into());
        }
    }

    let per_pair: Vec<(Vec<(Band, LabelFile)>, TransferReport)> = pairs
        .par_iter()
        .map(|pair| transfer_pair(pair, by_id.get(pair.pair_id.as_str()).copied(), opts))
        .collect::<Result<_>>()?;

    let mut out = BatchTransfer::default();
    for (files, report) in per_pair {
        for (band, file) in files {
            out.labels.entry(band).or_default().push(file);
        }
        out.report = std::mem::take(&mut out.report).merge(report);
    }
    Ok(out)
}

fn transfer_pair(
    pair: &FramePair,
    masks: Option<&MaskSet>,
    opts: &TransferOptions,
) -> Result<(Vec<(Band, LabelFile)>, TransferReport)> {
    let mut report = TransferReport { pairs: 1, ..Default::default() };
    let (rgb_labels, src) = match masks {
        Some(set) => {
            report.masksets = 1;
            let conv = maskio::masks_to_labels(set, opts.mode, opts.simplify_eps_px)?;
            report.conversion_dropped = conv.dropped;
            let src = SensorProfile { width_px: set.width, height_px: set.height, ..SensorProfile::default_rgb() };
            (conv.labels, src)
        }
        None => (LabelFile { pair_id: pair.pair_id.clone(), records: Vec::new() }, SensorProfile::default_rgb()),
    };

    let mut files = Vec::with_capacity(pair.images.len());
    for &band in pair.images.keys() {
        let file = if band == Band::Rgb {
            rgb_labels.clone()
        } else {
            let dst = opts.profiles.get(&band).cloned().unwrap_or_else(|| SensorProfile::default_for(band));
            let moved = transfer_labels(&rgb_labels, &src, &dst, opts.calibrations.get(&band))?;
            if moved.dropped > 0 {
                *report.clipped_dropped.entry(band).or_default() += moved.dropped;
            }
            moved.labels
        };
        report.records += file.records.len();
        files.push((band, file));
    }
    Ok((files, report))
}

/// Calibration file: either explicit coefficients or correspondences to fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_band: Option<Band>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst_band: Option<Band>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<[f64; 6]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondences: Option<Vec<Correspondence>>,
}

impl CalibrationFile {
    pub fn resolve(&self) -> Result<AffineCal, TransferError> {
        match (&self.coefficients, &self.correspondences) {
            (Some(c), None) => AffineCal::from_coefficients(*c),
            (None, Some(points)) => fit_affine(points),
            _ => Err(TransferError::InvalidCalibration(
                "exactly one of `coefficients` or `correspondences` is required".into(),
            )),
        }
    }

    pub fn load(path: &Path) -> Result<(Option<Band>, AffineCal)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok((file.dst_band, file.resolve()?))
    }
}
