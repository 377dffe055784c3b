//! Detection evaluation: IoU, greedy matching, 101-point AP, and mAP
//! reports stratified by band, labelling method, time of day and elevation.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{parse_capture_meta, CaptureMeta, MetaOverrides, Period};
use crate::maskio::{self, BBoxNorm, Geometry, LabelMode, LabelRecord};
use crate::{Band, Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no category has a defined AP")]
    EmptyStratum,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub pair_id: String,
    pub category_id: u32,
    pub bbox: BBoxNorm,
    pub confidence: f64,
}

/// How the training labels of the evaluated model were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Manual,
    #[serde(rename = "MATT")]
    Matt,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Manual, Method::Matt];

    pub fn dir_name(self) -> &'static str {
        match self {
            Method::Manual => "manual",
            Method::Matt => "matt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Manual => "Manual",
            Method::Matt => "MATT",
        })
    }
}

/// Elevation usable as an ordered map key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Elevation(pub f64);

impl Eq for Elevation {}

impl PartialOrd for Elevation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Elevation {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Stratum {
    pub band: Band,
    pub method: Method,
    pub period: Period,
    pub elevation_m: Elevation,
}

/// Intersection over union of two normalized boxes.
pub fn iou_bbox(a: &BBoxNorm, b: &BBoxNorm) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Box used for matching; polygons match by their bounds.
pub fn record_box(rec: &LabelRecord) -> BBoxNorm {
    match &rec.geometry {
        Geometry::BBox(b) => *b,
        Geometry::Polygon(p) => {
            let (x0, y0, x1, y1) = p.bounds();
            BBoxNorm { cx: (x0 + x1) / 2.0, cy: (y0 + y1) / 2.0, w: x1 - x0, h: y1 - y0 }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchOutcome {
    /// True-positive flag per detection, in input order.
    pub tp: Vec<bool>,
    /// Detection indices in processing (descending confidence) order.
    pub order: Vec<usize>,
    pub unmatched_gt: usize,
}

impl MatchOutcome {
    /// Flags in processing order, ready for [`average_precision`].
    pub fn ordered_flags(&self) -> Vec<bool> {
        self.order.iter().map(|&i| self.tp[i]).collect()
    }
}

/// Stable descending-confidence order; ties keep input order.
pub fn confidence_order(confidences: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]));
    order
}

/// Greedy matching for one image and category. Detections are visited by
/// descending confidence; each claims the unmatched ground truth with the
/// highest IoU (lowest index on ties) provided it reaches `iou_thresh`.
pub fn match_detections(dets: &[Detection], gts: &[LabelRecord], iou_thresh: f64) -> MatchOutcome {
    let gt_boxes: Vec<BBoxNorm> = gts.iter().map(record_box).collect();
    let order = confidence_order(&dets.iter().map(|d| d.confidence).collect::<Vec<_>>());
    let mut taken = vec![false; gt_boxes.len()];
    let mut tp = vec![false; dets.len()];
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt_boxes.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = iou_bbox(&dets[di].bbox, g);
            if iou >= iou_thresh && best.is_none_or(|(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
            tp[di] = true;
        }
    }
    MatchOutcome { tp, order, unmatched_gt: taken.iter().filter(|t| !**t).count() }
}

/// Number of evenly spaced recall points used by [`average_precision`].
pub const RECALL_POINTS: usize = 101;

/// Area under the rectified precision–recall curve sampled at recall
/// `0.00, 0.01, ..., 1.00`. `flags` must be in descending confidence order.
///
/// Returns `None` when there is nothing to score (no ground truth and no
/// detections); detections without ground truth score 0.
pub fn average_precision(flags: &[bool], total_gt: usize) -> Option<f64> {
    if total_gt == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    let mut precision = Vec::with_capacity(flags.len());
    let mut recall = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
        recall.push(tp as f64 / total_gt as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for k in 0..RECALL_POINTS {
        let t = k as f64 / (RECALL_POINTS - 1) as f64;
        while j < recall.len() && recall[j] < t - 1e-12 {
            j += 1;
        }
        if j < recall.len() {
            sum += precision[j];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

/// Unweighted mean over defined APs.
pub fn map_score(aps: &[Option<f64>]) -> Result<f64, EvalError> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(EvalError::EmptyStratum);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Detections and ground truth of one evaluated image.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub key: String,
    pub band: Band,
    pub method: Method,
    pub meta: CaptureMeta,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<LabelRecord>,
}

/// AP of one category over a set of images. Matching happens per image;
/// the resulting flags are ranked globally by confidence.
pub fn category_ap(images: &[&EvalImage], category: u32, iou_thresh: f64) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut total_gt = 0;
    for img in images {
        let dets: Vec<Detection> = img.detections.iter().filter(|d| d.category_id == category).cloned().collect();
        let gts: Vec<LabelRecord> = img.ground_truth.iter().filter(|g| g.category_id == category).cloned().collect();
        total_gt += gts.len();
        let m = match_detections(&dets, &gts, iou_thresh);
        scored.extend(m.order.iter().map(|&i| (dets[i].confidence, m.tp[i])));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    average_precision(&scored.iter().map(|s| s.1).collect::<Vec<_>>(), total_gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresh: f64,
    /// Number of ontology categories; ids `0..categories` are scored.
    pub categories: u32,
    /// Also compute mAP averaged over IoU 0.50:0.05:0.95.
    pub sweep: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { iou_thresh: DEFAULT_IOU_THRESHOLD, categories: 2, sweep: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub stratum: Stratum,
    pub images: usize,
    pub ap: BTreeMap<u32, Option<f64>>,
    pub map: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_50_95: Option<f64>,
}

/// Mean and standard error of a group of per-stratum mAP samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub bar_low: f64,
    pub bar_high: f64,
}

/// `SE = sample standard deviation / sqrt(n)`; zero for a single sample.
pub fn summarize(samples: &[f64]) -> Option<GroupSummary> {
    let n = samples.len();
    if n == 0 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let se = if n < 2 {
        0.0
    } else {
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    };
    Some(GroupSummary { n, mean, se, bar_low: mean - se, bar_high: mean + se })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Period(Period),
    Elevation(Elevation),
    Overall,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Period(p) => write!(f, "{p}"),
            Cell::Elevation(e) => write!(f, "{}m", e.0),
            Cell::Overall => f.write_str("overall"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub band: Band,
    pub method: Method,
    pub cell: Cell,
    /// Images across all strata in the cell.
    pub images: usize,
    pub samples: Vec<f64>,
    #[serde(flatten)]
    pub summary: GroupSummary,
}

/// Manual mean minus MATT mean for one cell; positive means manual wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodDelta {
    pub band: Band,
    pub cell: Cell,
    pub manual: f64,
    pub matt: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub strata: Vec<StratumResult>,
    /// Strata without any ground truth, left out of every mean.
    pub excluded: Vec<Stratum>,
    pub by_period: Vec<GroupStat>,
    pub by_elevation: Vec<GroupStat>,
    pub overall: Vec<GroupStat>,
    pub deltas: Vec<MethodDelta>,
}

/// Scores every (band, method, period, elevation) stratum and summarizes
/// them per period (samples over elevations), per elevation (samples over
/// periods) and overall.
pub fn stratified_report(images: &[EvalImage], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    if !(config.iou_thresh > 0.0 && config.iou_thresh <= 1.0) {
        return Err(EvalError::InvalidParameter(format!("iou threshold {} outside (0, 1]", config.iou_thresh)));
    }
    let mut groups: BTreeMap<Stratum, Vec<&EvalImage>> = BTreeMap::new();
    for img in images {
        let stratum = Stratum {
            band: img.band,
            method: img.method,
            period: img.meta.period,
            elevation_m: Elevation(img.meta.elevation_m),
        };
        groups.entry(stratum).or_default().push(img);
    }

    let mut strata = Vec::new();
    let mut excluded = Vec::new();
    for (stratum, imgs) in &groups {
        if imgs.iter().all(|i| i.ground_truth.is_empty()) {
            log::warn!("stratum {stratum:?} has no ground truth; excluded");
            excluded.push(*stratum);
            continue;
        }
        let score = |thresh: f64| -> (BTreeMap<u32, Option<f64>>, Result<f64, EvalError>) {
            let ap: BTreeMap<u32, Option<f64>> =
                (0..config.categories).map(|c| (c, category_ap(imgs, c, thresh))).collect();
            let map = map_score(&ap.values().copied().collect::<Vec<_>>());
            (ap, map)
        };
        let (ap, map) = score(config.iou_thresh);
        let Ok(map) = map else {
            excluded.push(*stratum);
            continue;
        };
        let map_50_95 = config.sweep.then(|| {
            let vals: Vec<f64> = (0..10).filter_map(|k| score(0.5 + 0.05 * k as f64).1.ok()).collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        });
        strata.push(StratumResult { stratum: *stratum, images: imgs.len(), ap, map, map_50_95 });
    }

    let collect = |key: &dyn Fn(&Stratum) -> Cell| -> Vec<GroupStat> {
        let mut cells: BTreeMap<(Band, Method, Cell), (usize, Vec<f64>)> = BTreeMap::new();
        for s in &strata {
            let entry = cells.entry((s.stratum.band, s.stratum.method, key(&s.stratum))).or_default();
            entry.0 += s.images;
            entry.1.push(s.map);
        }
        cells
            .into_iter()
            .map(|((band, method, cell), (images, samples))| GroupStat {
                band,
                method,
                cell,
                images,
                summary: summarize(&samples).expect("cells hold at least one sample"),
                samples,
            })
            .collect()
    };
    let by_period = collect(&|s| Cell::Period(s.period));
    let by_elevation = collect(&|s| Cell::Elevation(s.elevation_m));
    let overall = collect(&|_| Cell::Overall);

    let mut deltas = Vec::new();
    for stats in [&by_period, &by_elevation, &overall] {
        let manual: BTreeMap<(Band, Cell), f64> = stats
            .iter()
            .filter(|g| g.method == Method::Manual)
            .map(|g| ((g.band, g.cell), g.summary.mean))
            .collect();
        for g in stats.iter().filter(|g| g.method == Method::Matt) {
            if let Some(&m) = manual.get(&(g.band, g.cell)) {
                deltas.push(MethodDelta { band: g.band, cell: g.cell, manual: m, matt: g.summary.mean, delta: m - g.summary.mean });
            }
        }
    }

    Ok(EvalReport { config: config.clone(), strata, excluded, by_period, by_elevation, overall, deltas })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayNight {
    pub band: Band,
    pub method: Method,
    pub day: Option<f64>,
    pub night: Option<f64>,
    /// Periods absent from the report for this band and method.
    pub missing: Vec<Period>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayNightSummary {
    pub rows: Vec<DayNight>,
    /// Manual minus MATT per band for day and night.
    pub deltas: Vec<(Band, Option<f64>, Option<f64>)>,
}

/// Night averages the PreSunrise and PostSunset cells; day averages
/// PostSunrise, Noon and PreSunset.
pub fn aggregate_daynight(report: &EvalReport) -> DayNightSummary {
    let mut by_key: BTreeMap<(Band, Method), BTreeMap<Period, f64>> = BTreeMap::new();
    for g in &report.by_period {
        if let Cell::Period(p) = g.cell {
            by_key.entry((g.band, g.method)).or_default().insert(p, g.summary.mean);
        }
    }
    let mean_of = |cells: &BTreeMap<Period, f64>, night: bool| -> Option<f64> {
        let vals: Vec<f64> = cells.iter().filter(|(p, _)| p.is_night() == night).map(|(_, v)| *v).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let rows: Vec<DayNight> = by_key
        .iter()
        .map(|(&(band, method), cells)| {
            let missing: Vec<Period> = Period::ALL.into_iter().filter(|p| !cells.contains_key(p)).collect();
            if !missing.is_empty() {
                log::warn!("{band}/{method}: partial day/night aggregate, missing {missing:?}");
            }
            DayNight { band, method, day: mean_of(cells, false), night: mean_of(cells, true), missing }
        })
        .collect();
    let mut deltas = Vec::new();
    for band in Band::ALL {
        let find = |m| rows.iter().find(|r| r.band == band && r.method == m);
        if let (Some(man), Some(matt)) = (find(Method::Manual), find(Method::Matt)) {
            let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
            deltas.push((band, diff(man.day, matt.day), diff(man.night, matt.night)));
        }
    }
    DayNightSummary { rows, deltas }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{:.1}", v * 100.0)).unwrap_or_else(|| "-".into())
}

/// Plain-text tables: per-period and per-elevation mAP (percent) with error
/// bars, then the day/night summary.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "mAP@{:.2} by time of day (mean ± SE over elevations, percent)", report.config.iou_thresh).unwrap();
    for (title, stats) in [("period", &report.by_period), ("elevation", &report.by_elevation), ("overall", &report.overall)] {
        writeln!(out, "\n{:<10} {:<7} {:<12} {:>7} {:>6} {:>15} {:>4} {:>6}", "band", "method", title, "mean", "se", "bar", "n", "images").unwrap();
        for g in stats {
            let s = g.summary;
            writeln!(
                out,
                "{:<10} {:<7} {:<12} {:>7.1} {:>6.1} {:>7.1}–{:<7.1} {:>4} {:>6}",
                g.band.to_string(),
                g.method.to_string(),
                g.cell.to_string(),
                s.mean * 100.0,
                s.se * 100.0,
                s.bar_low * 100.0,
                s.bar_high * 100.0,
                s.n,
                g.images
            )
            .unwrap();
        }
    }
    if !report.deltas.is_empty() {
        writeln!(out, "\n{:<10} {:<12} {:>7} {:>7} {:>7}", "band", "cell", "manual", "MATT", "delta").unwrap();
        for d in &report.deltas {
            writeln!(
                out,
                "{:<10} {:<12} {:>7.1} {:>7.1} {:>7.1}",
                d.band.to_string(),
                d.cell.to_string(),
                d.manual * 100.0,
                d.matt * 100.0,
                d.delta * 100.0
            )
            .unwrap();
        }
    }
    let dn = aggregate_daynight(report);
    writeln!(out, "\n{:<10} {:<7} {:>7} {:>7}", "band", "method", "day", "night").unwrap();
    for r in &dn.rows {
        writeln!(out, "{:<10} {:<7} {:>7} {:>7}", r.band.to_string(), r.method.to_string(), fmt_opt(r.day), fmt_opt(r.night)).unwrap();
    }
    if !report.excluded.is_empty() {
        writeln!(out, "\nexcluded strata without ground truth: {}", report.excluded.len()).unwrap();
    }
    out
}

/// One CSV row per stratum.
pub fn render_csv(report: &EvalReport) -> String {
    let mut out = String::from("band,method,period,elevation_m,images,map\n");
    for s in &report.strata {
        writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            s.stratum.band, s.stratum.method, s.stratum.period, s.stratum.elevation_m.0, s.images, s.map
        )
        .unwrap();
    }
    out
}

/// Parses a prediction file: `<cls> <cx> <cy> <w> <h> <confidence>` per
/// line. Boxes are clipped to the frame; boxes that clip away are skipped.
pub fn parse_predictions(pair_id: &str, text: &str, file: &str) -> Result<Vec<Detection>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.is_empty() {
            continue;
        }
        let err = |message: String| EvalError::Parse { file: file.to_string(), line: i + 1, message };
        if t.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", t.len())));
        }
        let category_id = t[0].parse::<u32>().map_err(|_| err(format!("bad category `{}`", t[0])))?;
        let v = t[1..]
            .iter()
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(format!("non-numeric `{s}`"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if !(0.0..=1.0).contains(&v[4]) {
            return Err(err(format!("confidence {} outside [0, 1]", v[4])));
        }
        let x0 = (v[0] - v[2] / 2.0).clamp(0.0, 1.0);
        let x1 = (v[0] + v[2] / 2.0).clamp(0.0, 1.0);
        let y0 = (v[1] - v[3] / 2.0).clamp(0.0, 1.0);
        let y1 = (v[1] + v[3] / 2.0).clamp(0.0, 1.0);
        if x1 <= x0 || y1 <= y0 {
            continue;
        }
        let bbox = BBoxNorm::from_corners(x0, y0, x1, y1).map_err(|e| err(e.to_string()))?;
        out.push(Detection { pair_id: pair_id.to_string(), category_id, bbox, confidence: v[4] });
    }
    Ok(out)
}

/// Loads an evaluation set laid out as `gt/<band>/<stem>.txt` and
/// `preds/<method>/<band>/<stem>.txt`. Capture metadata comes from
/// `overrides` or, failing that, from the stem itself.
pub fn load_eval_images(preds_dir: &Path, gt_dir: &Path, overrides: &MetaOverrides) -> Result<Vec<EvalImage>> {
    let mut images = Vec::new();
    for band in Band::ALL {
        let band_gt = gt_dir.join(band.dir_name());
        if !band_gt.is_dir() {
            continue;
        }
        let mut gt_files: Vec<_> = fs::read_dir(&band_gt)
            .map_err(|e| Error::io(&band_gt, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        gt_files.sort();
        for gt_path in gt_files {
            let stem = gt_path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let meta = match overrides.get(&stem) {
                Some(m) => m.clone(),
                None => parse_capture_meta(&stem)?,
            };
            let gt = maskio::read_label_file(&gt_path, LabelMode::BBox)?;
            for method in Method::ALL {
                let method_dir = preds_dir.join(method.dir_name()).join(band.dir_name());
                if !method_dir.is_dir() {
                    continue;
                }
                let pred_path = method_dir.join(format!("{stem}.txt"));
                let detections = if pred_path.exists() {
                    let text = fs::read_to_string(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
                    parse_predictions(&stem, &text, &pred_path.display().to_string())?
                } else {
                    Vec::new()
                };
                images.push(EvalImage {
                    key: stem.clone(),
                    band,
                    method,
                    meta: meta.clone(),
                    detections,
                    ground_truth: gt.records.clone(),
                });
            }
        }
    }
    Ok(images)
}
