//! Acceptance suite. Prints one PASS/FAIL line per criterion with its
//! runtime against the budget, and exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use image::{DynamicImage, GrayImage, RgbImage};
use matt_bench::{random_labels, write_fixture};
use matt_core::evaluate::{
    aggregate_daynight, average_precision, match_detections, summarize, Cell, Detection, EvalConfig, EvalReport,
    GroupStat, Method,
};
use matt_core::imgproc::{self, expand_dataset, parse_ops, FilterParams, Sample};
use matt_core::maskio::{self, emit_yolo, parse_yolo, rle_decode, rle_encode, shoelace_area, trace_outer_contour, Bitmap};
use matt_core::pipeline::{run_pipeline, PipelineConfig, Stage, RUN_MANIFEST, TIMING_FILE};
use matt_core::review::{Action, ReviewDecision, ReviewStore, Timestamp, MAX_ELAPSED_SECONDS};
use matt_core::timing::{estimate_manual, report_reduction};
use matt_core::transfer::{fit_affine, transfer_labels, Correspondence};
use matt_core::{
    AffineCal, BBoxNorm, Band, Geometry, LabelFile, LabelMode, LabelRecord, Mask, Period, PolygonNorm, SensorProfile,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn timing_arithmetic() -> Outcome {
    let manual = estimate_manual(2400, 30.0).map_err(|e| e.to_string())?;
    check(manual == 20.0, || format!("estimate_manual(2400, 30) = {manual}"))?;
    let red = report_reduction(20.0, 2.4).map_err(|e| e.to_string())?;
    check((red - 87.8).abs() <= 0.5, || format!("reduction {red:.3}% is more than 0.5 pp from 87.8%"))?;
    Ok(format!("manual = {manual} h, reduction = {red:.2}%"))
}

fn dataset_fanout() -> Outcome {
    let ops = parse_ops("fliph,blur,dog", &FilterParams::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut total = 0;
    let mut per_band = Vec::new();
    for band in Band::ALL {
        let samples: Vec<Sample> = (0..200)
            .map(|i| {
                let stem = format!("{}_{i:04}", band.dir_name());
                let img = RgbImage::from_fn(64, 64, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
                let n = rng.random_range(0..4);
                Sample { labels: random_labels(&mut rng, &stem, n), stem, image: DynamicImage::ImageRgb8(img) }
            })
            .collect();
        let out = expand_dataset(&samples, &ops).map_err(|e| e.to_string())?;
        check(out.len() == 800, || format!("{band}: {} images, expected 800", out.len()))?;
        per_band.push(out.len());
        total += out.len();
    }
    check(total == 2400, || format!("{total} images in total, expected 2400"))?;
    Ok(format!("per band {per_band:?}, total {total}"))
}

fn random_box(rng: &mut ChaCha8Rng) -> BBoxNorm {
    let w = rng.random_range(0.05..0.5);
    let h = rng.random_range(0.05..0.5);
    BBoxNorm::new(rng.random_range(w / 2.0..1.0 - w / 2.0), rng.random_range(h / 2.0..1.0 - h / 2.0), w, h).unwrap()
}

fn jitter(rng: &mut ChaCha8Rng, b: &BBoxNorm) -> BBoxNorm {
    let (x0, y0, x1, y1) = b.corners();
    let d = |rng: &mut ChaCha8Rng| rng.random_range(-0.04..0.04);
    let (nx0, nx1) = ((x0 + d(rng)).clamp(0.0, 1.0), (x1 + d(rng)).clamp(0.0, 1.0));
    let (ny0, ny1) = ((y0 + d(rng)).clamp(0.0, 1.0), (y1 + d(rng)).clamp(0.0, 1.0));
    if nx1 - nx0 < 0.01 || ny1 - ny0 < 0.01 {
        return *b;
    }
    BBoxNorm::from_corners(nx0, ny0, nx1, ny1).unwrap()
}

fn map_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut matched = 0;
    for scene in 0..200 {
        let n_gt = rng.random_range(0..=6);
        let gts: Vec<LabelRecord> =
            (0..n_gt).map(|_| LabelRecord { category_id: 0, geometry: Geometry::BBox(random_box(&mut rng)) }).collect();
        let n_det = rng.random_range(0..=10);
        let dets: Vec<Detection> = (0..n_det)
            .map(|_| {
                let bbox = match (&gts.is_empty(), rng.random_bool(0.7)) {
                    (false, true) => {
                        let Geometry::BBox(g) = &gts[rng.random_range(0..gts.len())].geometry else { unreachable!() };
                        jitter(&mut rng, g)
                    }
                    _ => random_box(&mut rng),
                };
                // coarse confidences so ties occur
                let confidence = rng.random_range(0..5) as f64 / 4.0;
                Detection { pair_id: format!("s{scene}"), category_id: 0, bbox, confidence }
            })
            .collect();
        let gt_boxes: Vec<BBoxNorm> =
            gts.iter().map(|g| if let Geometry::BBox(b) = g.geometry { b } else { unreachable!() }).collect();
        let m = match_detections(&dets, &gts, 0.5);
        let oracle = common::brute_force_flags(&dets, &gts, 0.5, |d, g| common::iou_oracle(&dets[d].bbox, &gt_boxes[g]));
        check(m.tp == oracle, || format!("scene {scene}: greedy {:?} vs exhaustive {oracle:?}", m.tp))?;
        matched += oracle.iter().filter(|f| **f).count();
        let flags = m.ordered_flags();
        match average_precision(&flags, n_gt) {
            None => check(n_gt == 0 && dets.is_empty(), || format!("scene {scene}: AP undefined"))?,
            Some(ap) if n_gt == 0 => check(ap == 0.0, || format!("scene {scene}: AP {ap} with no ground truth"))?,
            Some(ap) => {
                let exact = common::all_point_ap(&flags, n_gt);
                worst = worst.max((ap - exact).abs());
                check((ap - exact).abs() <= 0.01, || format!("scene {scene}: AP {ap} vs all-point {exact}"))?;
            }
        }
    }
    Ok(format!("200 scenes, {matched} matches agree, max |AP101 - AP_all| = {worst:.5}"))
}

fn random_bitmap(rng: &mut ChaCha8Rng) -> Bitmap {
    let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
    let density = rng.random_range(0.0..1.0);
    let data = (0..w * h).map(|_| rng.random_bool(density)).collect();
    Bitmap::from_vec(w, h, data).unwrap()
}

/// A 4-connected blob grown from a seed, with holes filled.
fn random_blob(rng: &mut ChaCha8Rng) -> Bitmap {
    let (w, h) = (rng.random_range(4..40u32), rng.random_range(4..40u32));
    let mut b = Bitmap::new(w, h).unwrap();
    let mut frontier = vec![(rng.random_range(0..h), rng.random_range(0..w))];
    b.set(frontier[0].0, frontier[0].1, true);
    let target = rng.random_range(1..=(w * h / 2).max(1));
    let mut count = 1;
    while count < target {
        let (r, c) = frontier[rng.random_range(0..frontier.len())];
        let (nr, nc) = match rng.random_range(0..4) {
            0 => (r.wrapping_sub(1), c),
            1 => (r + 1, c),
            2 => (r, c.wrapping_sub(1)),
            _ => (r, c + 1),
        };
        if nr < h && nc < w && !b.get(nr, nc) {
            b.set(nr, nc, true);
            frontier.push((nr, nc));
            count += 1;
        }
    }
    common::fill_holes(&b)
}

fn codec_roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let b = random_bitmap(&mut rng);
        let runs = rle_encode(&b);
        let back = rle_decode(&runs, b.width(), b.height()).map_err(|e| e.to_string())?;
        check(back == b, || format!("RLE case {case} does not round-trip"))?;
    }
    let mut yolo_worst = 0.0f64;
    for case in 0..200 {
        let n = rng.random_range(0..8);
        let labels = random_labels(&mut rng, "p", n);
        let back = parse_yolo("p", &emit_yolo(&labels, LabelMode::BBox), LabelMode::BBox).map_err(|e| e.to_string())?;
        check(back.records.len() == labels.records.len(), || format!("YOLO case {case}: record count"))?;
        for (a, b) in labels.records.iter().zip(&back.records) {
            let (Geometry::BBox(a), Geometry::BBox(b)) = (&a.geometry, &b.geometry) else { unreachable!() };
            for d in [a.cx - b.cx, a.cy - b.cy, a.w - b.w, a.h - b.h] {
                yolo_worst = yolo_worst.max(d.abs());
            }
        }
    }
    check(yolo_worst <= 1e-6, || format!("YOLO round-trip error {yolo_worst:e}"))?;
    for case in 0..100 {
        let b = random_blob(&mut rng);
        let fg = b.count_ones();
        let contour = trace_outer_contour(&b).map_err(|e| e.to_string())?;
        let contour: Vec<(f64, f64)> = contour.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
        let px_area = shoelace_area(&contour).abs();
        check(px_area == fg as f64, || format!("blob {case}: contour area {px_area} vs {fg} pixels"))?;
        let poly = maskio::mask_to_polygon(&Mask::from_bitmap(&b, 0, 1.0), 0.0).map_err(|e| e.to_string())?;
        let frac = fg as f64 / (b.width() * b.height()) as f64;
        check((poly.area().abs() - frac).abs() <= 1e-12, || format!("blob {case}: polygon area {} vs {frac}", poly.area()))?;
    }
    Ok(format!("1000 RLE, 200 YOLO (max err {yolo_worst:.1e}), 100 polygon areas exact"))
}

fn random_cal(rng: &mut ChaCha8Rng) -> AffineCal {
    loop {
        let c: [f64; 6] = [
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-300.0..300.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-300.0..300.0),
        ];
        if (c[0] * c[4] - c[1] * c[3]).abs() > 0.1 {
            return AffineCal::from_coefficients(c).unwrap();
        }
    }
}

fn polygon_labels(rng: &mut ChaCha8Rng, n: usize) -> LabelFile {
    let records = (0..n)
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.45..0.55), rng.random_range(0.45..0.55));
            let r = rng.random_range(0.01..0.04);
            let k = rng.random_range(3..8);
            let verts: Vec<(f64, f64)> = (0..k)
                .map(|i| {
                    let t = i as f64 / k as f64 * std::f64::consts::TAU;
                    (cx + r * t.cos(), cy + r * t.sin())
                })
                .collect();
            LabelRecord { category_id: 0, geometry: Geometry::Polygon(PolygonNorm::new(verts).unwrap()) }
        })
        .collect();
    LabelFile { pair_id: "p".into(), records }
}

fn max_geometry_diff(a: &LabelFile, b: &LabelFile) -> Option<f64> {
    if a.records.len() != b.records.len() {
        return None;
    }
    let mut worst = 0.0f64;
    for (x, y) in a.records.iter().zip(&b.records) {
        match (&x.geometry, &y.geometry) {
            (Geometry::BBox(p), Geometry::BBox(q)) => {
                for d in [p.cx - q.cx, p.cy - q.cy, p.w - q.w, p.h - q.h] {
                    worst = worst.max(d.abs());
                }
            }
            (Geometry::Polygon(p), Geometry::Polygon(q)) if p.vertices().len() == q.vertices().len() => {
                for (u, v) in p.vertices().iter().zip(q.vertices()) {
                    worst = worst.max((u.0 - v.0).abs()).max((u.1 - v.1).abs());
                }
            }
            _ => return None,
        }
    }
    Some(worst)
}

fn transfer_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rgb = SensorProfile::default_rgb();
    let lwir = SensorProfile::default_lwir();
    let identity = AffineCal::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0).unwrap();

    let mut id_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(0..6);
        let labels = random_labels(&mut rng, "p", n);
        let none = transfer_labels(&labels, &rgb, &lwir, None).map_err(|e| e.to_string())?;
        check(none.labels == labels && none.dropped == 0, || "transfer without calibration changed labels".into())?;
        let same = transfer_labels(&labels, &rgb, &rgb, Some(&identity)).map_err(|e| e.to_string())?;
        let d = max_geometry_diff(&labels, &same.labels).ok_or("identity transfer changed record structure")?;
        id_worst = id_worst.max(d);
    }
    check(id_worst <= 1e-12, || format!("identity calibration moved labels by {id_worst:e}"))?;

    let mut fit_worst = 0.0f64;
    for case in 0..100 {
        let cal = random_cal(&mut rng);
        let n = rng.random_range(3..20);
        let points: Vec<Correspondence> = (0..n)
            .map(|_| {
                let src = (rng.random_range(0.0..640.0), rng.random_range(0.0..512.0));
                Correspondence { src, dst: cal.apply(src) }
            })
            .collect();
        let fit = fit_affine(&points).map_err(|e| format!("case {case}: {e}"))?;
        for (a, b) in fit.coefficients().iter().zip(cal.coefficients()) {
            fit_worst = fit_worst.max((a - b).abs());
        }
    }
    check(fit_worst <= 1e-9, || format!("fit_affine coefficient error {fit_worst:e}"))?;

    // General affine maps: polygons. Axis-aligned maps: boxes as well.
    let mut rt_worst = 0.0f64;
    let mut rt_cases = 0;
    for case in 0..100 {
        let (sw, sh) = (rgb.width_px as f64, rgb.height_px as f64);
        let (dw, dh) = (lwir.width_px as f64, lwir.height_px as f64);
        let (a, e) = (rng.random_range(0.6..1.4) * dw / sw, rng.random_range(0.6..1.4) * dh / sh);
        let (b, d) = if case % 2 == 0 {
            (rng.random_range(-0.3..0.3) * dw / sh, rng.random_range(-0.3..0.3) * dh / sw)
        } else {
            (0.0, 0.0)
        };
        let cx = dw / 2.0 - (a * sw / 2.0 + b * sh / 2.0);
        let cy = dh / 2.0 - (d * sw / 2.0 + e * sh / 2.0);
        let cal = AffineCal::new(a, b, cx + rng.random_range(-20.0..20.0), d, e, cy + rng.random_range(-20.0..20.0)).unwrap();
        let inv = cal.inverse().map_err(|e| e.to_string())?;
        let mut sets = vec![polygon_labels(&mut rng, 4)];
        if b == 0.0 && d == 0.0 {
            let boxes = (0..4)
                .map(|_| {
                    let (w, h) = (rng.random_range(0.02..0.1), rng.random_range(0.02..0.1));
                    let bbox = BBoxNorm::new(rng.random_range(0.4..0.6), rng.random_range(0.4..0.6), w, h).unwrap();
                    LabelRecord { category_id: 1, geometry: Geometry::BBox(bbox) }
                })
                .collect();
            sets.push(LabelFile { pair_id: "p".into(), records: boxes });
        }
        for labels in sets {
            let fwd = transfer_labels(&labels, &rgb, &lwir, Some(&cal)).map_err(|e| e.to_string())?;
            check(fwd.dropped == 0, || format!("case {case}: interior label clipped"))?;
            let back = transfer_labels(&fwd.labels, &lwir, &rgb, Some(&inv)).map_err(|e| e.to_string())?;
            let d = max_geometry_diff(&labels, &back.labels).ok_or_else(|| format!("case {case}: structure changed"))?;
            rt_worst = rt_worst.max(d);
            rt_cases += 1;
        }
    }
    check(rt_worst <= 1e-9, || format!("round-trip error {rt_worst:e}"))?;
    Ok(format!(
        "identity err {id_worst:.1e}, fit err {fit_worst:.1e} (100 fits), round-trip err {rt_worst:.1e} ({rt_cases} files)"
    ))
}

fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]))
}

fn filter_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in [0u8, 37, 128, 255] {
        let c = RgbImage::from_pixel(16, 16, image::Rgb([v, v, v]));
        let blur = imgproc::gaussian_blur(&c, 1.7).map_err(|e| e.to_string())?;
        check(blur == c, || format!("blur moved constant {v}"))?;
        check(imgproc::sobel_xy(&c).pixels().all(|p| p[0] == 0), || format!("sobel of constant {v} is not 0"))?;
        let d = imgproc::dog(&c, 1.0, 2.0).map_err(|e| e.to_string())?;
        check(d.pixels().all(|p| p.0 == [128; 3]), || format!("dog of constant {v} is not 128"))?;
    }
    let ramp = GrayImage::from_fn(16, 16, |x, _| image::Luma([(10 + x) as u8]));
    let s = imgproc::sobel_xy(&ramp);
    for y in 1..15 {
        for x in 1..15 {
            check(s.get_pixel(x, y)[0] == 8, || format!("ramp sobel at ({x},{y}) = {}", s.get_pixel(x, y)[0]))?;
        }
    }
    let mut flip_worst = 0.0f64;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(1..20), rng.random_range(1..20));
        let img = random_rgb(&mut rng, w, h);
        check(imgproc::flip_h(&imgproc::flip_h(&img)) == img, || "image flip is not an involution".into())?;
        let mut labels = random_labels(&mut rng, "p", 5);
        labels.records.extend(polygon_labels(&mut rng, 2).records);
        let twice = imgproc::flip_labels_h(&imgproc::flip_labels_h(&labels));
        flip_worst = flip_worst.max(max_geometry_diff(&labels, &twice).ok_or("label flip changed structure")?);
    }
    check(flip_worst <= 1e-15, || format!("label flip round-trip error {flip_worst:e}"))?;

    let mut worst = [0u8; 3];
    let mut near_boundary = 0;
    for _ in 0..20 {
        let img = random_rgb(&mut rng, 16, 16);
        let sigma = rng.random_range(0.5..2.5);
        let b = imgproc::gaussian_blur(&img, sigma).map_err(|e| e.to_string())?;
        worst[0] = worst[0].max(common::max_abs_diff(b.as_raw(), common::blur_oracle(&img, sigma).as_raw()));
        let s = imgproc::sobel_xy(&img);
        worst[1] = worst[1].max(common::max_abs_diff(s.as_raw(), common::sobel_oracle(&img).as_raw()));
        let s1 = rng.random_range(0.5..1.5);
        let s2 = s1 + rng.random_range(0.3..1.5);
        let d = imgproc::dog(&img, s1, s2).map_err(|e| e.to_string())?;
        worst[2] = worst[2].max(common::max_abs_diff(d.as_raw(), common::dog_oracle(&img, s1, s2).as_raw()));
        let block = [3u32, 5, 7, 11, 15][rng.random_range(0..5)];
        let bias = rng.random_range(-5.0..5.0);
        let t = imgproc::gaussian_threshold(&img, block, bias).map_err(|e| e.to_string())?;
        let (oracle, near) = common::threshold_oracle(&img, block, bias);
        for (i, (a, b)) in t.as_raw().iter().zip(oracle.as_raw()).enumerate() {
            if near[i] {
                near_boundary += 1;
                continue;
            }
            check(a == b, || format!("threshold block {block} bias {bias:.2}: pixel {i} is {a}, oracle {b}"))?;
        }
    }
    check(worst.iter().all(|w| *w <= 1), || format!("max level error blur/sobel/dog = {worst:?}"))?;
    Ok(format!(
        "fixed points ok, ramp = 8, flip err {flip_worst:.0e}, oracle level error blur/sobel/dog {worst:?}, threshold exact ({near_boundary} boundary px)"
    ))
}

fn stat(method: Method, period: Period, v: f64) -> GroupStat {
    GroupStat {
        band: Band::Lwir,
        method,
        cell: Cell::Period(period),
        images: 10,
        samples: vec![v],
        summary: summarize(&[v]).unwrap(),
    }
}

fn statistics() -> Outcome {
    let s = summarize(&[0.6, 0.8]).ok_or("empty summary")?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    check(s.n == 2 && close(s.mean, 0.7) && close(s.se, 0.1), || format!("mean {} se {}", s.mean, s.se))?;
    check(close(s.bar_low, 0.6) && close(s.bar_high, 0.8), || format!("bars [{}, {}]", s.bar_low, s.bar_high))?;

    let matt = [0.50, 0.62, 0.70, 0.66, 0.44];
    let manual = [0.58, 0.65, 0.71, 0.69, 0.52];
    let mut by_period = Vec::new();
    for (i, p) in Period::ALL.into_iter().enumerate() {
        by_period.push(stat(Method::Matt, p, matt[i]));
        by_period.push(stat(Method::Manual, p, manual[i]));
    }
    let report = EvalReport {
        config: EvalConfig::default(),
        strata: Vec::new(),
        excluded: Vec::new(),
        by_period,
        by_elevation: Vec::new(),
        overall: Vec::new(),
        deltas: Vec::new(),
    };
    let dn = aggregate_daynight(&report);
    // night: pre-sunrise and post-sunset; day: the three daylight periods
    let expect = |v: &[f64; 5]| ((v[1] + v[2] + v[3]) / 3.0, (v[0] + v[4]) / 2.0);
    for (method, vals) in [(Method::Matt, &matt), (Method::Manual, &manual)] {
        let row = dn.rows.iter().find(|r| r.method == method).ok_or("missing row")?;
        let (day, night) = expect(vals);
        check(row.day.is_some_and(|d| close(d, day)) && row.night.is_some_and(|n| close(n, night)), || {
            format!("{method}: day {:?} night {:?}, expected {day} {night}", row.day, row.night)
        })?;
        check(row.missing.is_empty(), || format!("{method}: missing periods {:?}", row.missing))?;
    }
    let (_, dd, dnight) = dn.deltas.first().copied().ok_or("no delta row")?;
    let (md, mn) = expect(&manual);
    let (td, tn) = expect(&matt);
    check(dd.is_some_and(|d| close(d, md - td)) && dnight.is_some_and(|n| close(n, mn - tn)), || {
        format!("deltas {dd:?} {dnight:?}")
    })?;
    Ok(format!("[0.6, 0.8] -> mean {:.3} se {:.3}; day/night deltas {:.3}/{:.3}", s.mean, s.se, md - td, mn - tn))
}

fn collect_files(root: &Path, skip: &[&str]) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, skip: &[&str], out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            if skip.contains(&rel.as_str()) {
                continue;
            }
            if path.is_dir() {
                walk(&path, root, skip, out);
            } else {
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, skip, &mut out);
    out
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = write_fixture(&tmp.path().join("fixture"), 100, 64, 17).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    let mut rates = Vec::new();
    for run in ["a", "b"] {
        let work = tmp.path().join(run);
        let text = matt_bench::fixture_config(&fixture, &work, &["fliph", "blur", "dog"], 42);
        let config = PipelineConfig::from_toml(&text).map_err(|e| e.to_string())?;
        let outcome = run_pipeline(&config).map_err(|e| e.to_string())?;
        let rec = outcome.manifest.stages.iter().find(|s| s.stage == Stage::Transfer).ok_or("no transfer record")?;
        let records = rec.details.get("records").copied().unwrap_or(0) as f64;
        let secs = outcome.timing.stages.iter().find(|s| s.stage == "transfer").ok_or("no transfer timing")?.wall_seconds;
        rates.push(records / secs.max(0.001));
        trees.push(collect_files(&work, &[TIMING_FILE]));
    }
    check(trees[0].contains_key(RUN_MANIFEST), || "run manifest missing".into())?;
    let differing: Vec<&String> = trees[0]
        .keys()
        .chain(trees[1].keys())
        .filter(|k| trees[0].get(*k) != trees[1].get(*k))
        .collect();
    check(differing.is_empty(), || format!("{} files differ, e.g. {:?}", differing.len(), differing.first()))?;
    let rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    check(rate >= 500.0, || format!("transfer stage sustained {rate:.0} transfers/s"))?;
    Ok(format!("{} files identical, transfer stage >= {rate:.0} transfers/s", trees[0].len()))
}

fn review_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = write_fixture(&tmp.path().join("fixture"), 30, 48, 3).map_err(|e| e.to_string())?;
    let work = tmp.path().join("work");
    let mut config = PipelineConfig::from_toml(&matt_bench::fixture_config(&fixture, &work, &[], 1)).map_err(|e| e.to_string())?;
    config.stages = vec![Stage::Pair, Stage::IngestMasks, Stage::Transfer];
    run_pipeline(&config).map_err(|e| e.to_string())?;

    let mut store = ReviewStore::open(&work, LabelMode::BBox).map_err(|e| e.to_string())?;
    let ids: Vec<String> = store.list_all(usize::MAX, 0).into_iter().map(|e| e.pair_id).collect();
    let mut model: BTreeMap<(Band, String), LabelFile> = BTreeMap::new();
    for band in Band::ALL {
        for id in &ids {
            model.insert((band, id.clone()), store.labels_for(id, band).map_err(|e| e.to_string())?.clone());
        }
    }
    let mut rejected = std::collections::BTreeSet::new();
    let mut elapsed = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let t0: Timestamp = "2026-03-01T08:00:00Z".parse().unwrap();
    for i in 0..50 {
        let id = ids[rng.random_range(0..ids.len())].clone();
        let band = Band::ALL[rng.random_range(0..3)];
        let action = [Action::Accept, Action::Edit, Action::Reject][rng.random_range(0..3)];
        let n = rng.random_range(0..4);
        let edited_labels = (action == Action::Edit).then(|| random_labels(&mut rng, &id, n));
        let secs = rng.random_range(1.0..900.0);
        let decision = ReviewDecision {
            pair_id: id.clone(),
            band,
            action,
            edited_labels: edited_labels.clone(),
            reviewer: format!("r{}", i % 3),
            elapsed_seconds: secs,
            timestamp: t0 + chrono_secs(i),
            token: Some(format!("t{i}")),
        };
        store.post_decision(decision, true).map_err(|e| e.to_string())?;
        if let Some(l) = edited_labels {
            model.insert((band, id.clone()), l);
        }
        if action == Action::Reject {
            rejected.insert(id);
        } else {
            rejected.remove(&id);
        }
        elapsed.push(secs.min(MAX_ELAPSED_SECONDS));
    }
    let replayed = ReviewStore::open(&work, LabelMode::BBox).map_err(|e| e.to_string())?;
    check(replayed.labels() == store.labels(), || "replayed labels differ from live state".into())?;
    for ((band, id), want) in &model {
        let got = replayed.labels_for(id, *band).map_err(|e| e.to_string())?;
        check(got == want, || format!("{band}/{id}: replayed labels differ from expected"))?;
    }
    check(replayed.rejected() == rejected, || format!("rejected {:?} vs {rejected:?}", replayed.rejected()))?;
    let mean = elapsed.iter().sum::<f64>() / elapsed.len() as f64;
    let stats = replayed.review_stats();
    let got = stats.mean_elapsed_seconds.ok_or("no mean")?;
    check((got - mean).abs() <= 1e-9, || format!("mean elapsed {got} vs {mean}"))?;
    check(stats.decisions_logged == 50, || format!("{} decisions replayed", stats.decisions_logged))?;
    Ok(format!("50 decisions replayed, {} rejected, mean {mean:.3} s", rejected.len()))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn chrono_secs(i: i64) -> chrono::TimeDelta {
    chrono::TimeDelta::seconds(i * 37)
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("timing arithmetic", Duration::from_secs(1), timing_arithmetic),
        ("dataset fan-out", Duration::from_secs(30), dataset_fanout),
        ("mAP oracle equivalence", Duration::from_secs(10), map_oracle),
        ("codec round-trips", Duration::from_secs(10), codec_roundtrips),
        ("transfer invariants", Duration::from_secs(5), transfer_invariants),
        ("filter correctness", Duration::from_secs(10), filter_correctness),
        ("statistics", Duration::from_secs(1), statistics),
        ("pipeline determinism + throughput", Duration::MAX, pipeline_determinism),
        ("review log determinism", Duration::MAX, review_determinism),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = run();
        let took = start.elapsed();
        let budget_txt = if budget == Duration::MAX { "no budget".to_string() } else { format!("budget {budget:?}") };
        let result = match result {
            Ok(msg) if took > budget => Err(format!("over budget: {msg}")),
            r => r,
        };
        match result {
            Ok(msg) => println!("PASS  {name:<34} {took:>10.2?} ({budget_txt})  {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<34} {took:>10.2?} ({budget_txt})  {msg}");
            }
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
