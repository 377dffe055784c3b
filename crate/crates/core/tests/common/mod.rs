//! Reference implementations used as test oracles. They are written for
//! clarity, not speed: full 2D kernels, exhaustive search, exact areas.

#![allow(dead_code)]

use image::{GrayImage, Pixel, RgbImage};
use matt_core::evaluate::Detection;
use matt_core::maskio::Bitmap;
use matt_core::{BBoxNorm, LabelRecord};

/// Mirror-with-edge index folding, written as a loop.
pub fn mirror(mut i: i64, n: i64) -> i64 {
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - 1 - i };
    }
    i
}

/// Convolves a row-major float grid with a full 2D kernel of odd size.
pub fn conv2d(data: &[f64], w: usize, h: usize, kernel: &[Vec<f64>]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (ky, row) in kernel.iter().enumerate() {
                for (kx, k) in row.iter().enumerate() {
                    let sx = mirror(x + kx as i64 - r, w as i64);
                    let sy = mirror(y + ky as i64 - r, h as i64);
                    acc += k * data[(sy as usize) * w + sx as usize];
                }
            }
            out[(y as usize) * w + x as usize] = acc;
        }
    }
    out
}

/// Isotropic 2D Gaussian over a `(2r+1)^2` window, normalized over the window.
pub fn gauss2d(sigma: f64, r: usize) -> Vec<Vec<f64>> {
    let r = r as i64;
    let mut k: Vec<Vec<f64>> = (-r..=r)
        .map(|y| (-r..=r).map(|x| (-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp()).collect())
        .collect();
    let total: f64 = k.iter().flatten().sum();
    k.iter_mut().flatten().for_each(|v| *v /= total);
    k
}

pub fn channel(img: &RgbImage, c: usize) -> Vec<f64> {
    img.pixels().map(|p| p.channels()[c] as f64).collect()
}

pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels().map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
}

pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn blur_oracle(img: &RgbImage, sigma: f64) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let k = gauss2d(sigma, (3.0 * sigma).ceil() as usize);
    let planes: Vec<Vec<f64>> = (0..3).map(|c| conv2d(&channel(img, c), w, h, &k)).collect();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([quantize(planes[0][i]), quantize(planes[1][i]), quantize(planes[2][i])])
    })
}

pub fn dog_oracle(img: &RgbImage, s1: f64, s2: f64) -> RgbImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let k1 = gauss2d(s1, (3.0 * s1).ceil() as usize);
    let k2 = gauss2d(s2, (3.0 * s2).ceil() as usize);
    let planes: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let ch = channel(img, c);
            let a = conv2d(&ch, w, h, &k1);
            let b = conv2d(&ch, w, h, &k2);
            a.iter().zip(&b).map(|(a, b)| a - b + 128.0).collect()
        })
        .collect();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([quantize(planes[0][i]), quantize(planes[1][i]), quantize(planes[2][i])])
    })
}

pub fn sobel_oracle(img: &RgbImage) -> GrayImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let kx = vec![vec![-1.0, 0.0, 1.0], vec![-2.0, 0.0, 2.0], vec![-1.0, 0.0, 1.0]];
    let ky = vec![vec![-1.0, -2.0, -1.0], vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 1.0]];
    let l = luma(img);
    let gx = conv2d(&l, w, h, &kx);
    let gy = conv2d(&l, w, h, &ky);
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Luma([quantize((gx[i] * gx[i] + gy[i] * gy[i]).sqrt())])
    })
}

/// Threshold oracle. Returns the image and a per-pixel flag marking pixels
/// whose value sits within `1e-9` of the decision boundary.
pub fn threshold_oracle(img: &RgbImage, block: u32, bias: f64) -> (GrayImage, Vec<bool>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sigma = 0.3 * ((block as f64 - 1.0) / 2.0 - 1.0) + 0.8;
    let k = gauss2d(sigma, (block / 2) as usize);
    let l = luma(img);
    let mean = conv2d(&l, w, h, &k);
    let near: Vec<bool> = l.iter().zip(&mean).map(|(v, m)| (v - (m - bias)).abs() < 1e-9).collect();
    let out = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Luma([if l[i] > mean[i] - bias { 255 } else { 0 }])
    });
    (out, near)
}

/// Largest per-sample difference between two byte buffers.
pub fn max_abs_diff(a: &[u8], b: &[u8]) -> u8 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

/// IoU from corner coordinates, computed via explicit interval overlap.
pub fn iou_oracle(a: &BBoxNorm, b: &BBoxNorm) -> f64 {
    let overlap = |a0: f64, a1: f64, b0: f64, b1: f64| {
        let lo = if a0 > b0 { a0 } else { b0 };
        let hi = if a1 < b1 { a1 } else { b1 };
        if hi > lo {
            hi - lo
        } else {
            0.0
        }
    };
    let ix = overlap(a.cx - a.w / 2.0, a.cx + a.w / 2.0, b.cx - b.w / 2.0, b.cx + b.w / 2.0);
    let iy = overlap(a.cy - a.h / 2.0, a.cy + a.h / 2.0, b.cy - b.h / 2.0, b.cy + b.h / 2.0);
    let inter = ix * iy;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Exhaustive matcher. Every injective partial assignment of detections to
/// ground truth (IoU at or above threshold) is enumerated; the winner
/// maximizes, detection by detection in confidence order, the key
/// (matched, IoU, lower ground-truth index). Flags come back in input order.
pub fn brute_force_flags(dets: &[Detection], gts: &[LabelRecord], thr: f64, ious: impl Fn(usize, usize) -> f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    // insertion sort: stable, descending confidence
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && dets[order[j - 1]].confidence < dets[order[j]].confidence {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    type Key = (u8, f64, i64);
    fn better(a: &[Key], b: &[Key]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x.0 != y.0 {
                return x.0 > y.0;
            }
            if x.1 != y.1 {
                return x.1 > y.1;
            }
            if x.2 != y.2 {
                return x.2 > y.2;
            }
        }
        false
    }
    struct Search<'a, F: Fn(usize, usize) -> f64> {
        order: &'a [usize],
        n_gt: usize,
        thr: f64,
        iou: F,
        best: Option<(Vec<Key>, Vec<Option<usize>>)>,
    }
    fn go<F: Fn(usize, usize) -> f64>(s: &mut Search<F>, k: usize, used: &mut Vec<bool>, keys: &mut Vec<Key>, pick: &mut Vec<Option<usize>>) {
        if k == s.order.len() {
            if s.best.as_ref().is_none_or(|(bk, _)| better(keys, bk)) {
                s.best = Some((keys.clone(), pick.clone()));
            }
            return;
        }
        let d = s.order[k];
        for g in 0..s.n_gt {
            let iou = (s.iou)(d, g);
            if !used[g] && iou >= s.thr {
                used[g] = true;
                keys.push((1, iou, -(g as i64)));
                pick.push(Some(g));
                go(s, k + 1, used, keys, pick);
                pick.pop();
                keys.pop();
                used[g] = false;
            }
        }
        keys.push((0, 0.0, 0));
        pick.push(None);
        go(s, k + 1, used, keys, pick);
        pick.pop();
        keys.pop();
    }
    let mut s = Search { order: &order, n_gt: gts.len(), thr, iou: ious, best: None };
    go(&mut s, 0, &mut vec![false; gts.len()], &mut Vec::new(), &mut Vec::new());
    let (_, pick) = s.best.expect("the empty assignment always exists");
    let mut flags = vec![false; dets.len()];
    for (k, p) in pick.iter().enumerate() {
        flags[order[k]] = p.is_some();
    }
    flags
}

/// All-point interpolated AP: the exact area under the rectified
/// precision-recall step curve.
pub fn all_point_ap(flags: &[bool], total_gt: usize) -> f64 {
    let mut p = Vec::new();
    let mut r = Vec::new();
    let mut tp = 0.0;
    for (i, f) in flags.iter().enumerate() {
        if *f {
            tp += 1.0;
        }
        p.push(tp / (i as f64 + 1.0));
        r.push(tp / total_gt as f64);
    }
    let mut area = 0.0;
    let mut prev_r = 0.0;
    for k in 0..p.len() {
        let envelope = p[k..].iter().cloned().fold(0.0, f64::max);
        area += (r[k] - prev_r) * envelope;
        prev_r = r[k];
    }
    area
}

/// Fills every background region not 8-connected to the frame border.
pub fn fill_holes(b: &Bitmap) -> Bitmap {
    let (w, h) = (b.width() as i64, b.height() as i64);
    let mut outside = vec![false; (w * h) as usize];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !b.get(y as u32, x as u32) {
                outside[(y * w + x) as usize] = true;
                stack.push((x, y));
            }
        }
    }
    while let Some((x, y)) = stack.pop() {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let i = (ny * w + nx) as usize;
                if !outside[i] && !b.get(ny as u32, nx as u32) {
                    outside[i] = true;
                    stack.push((nx, ny));
                }
            }
        }
    }
    let data = outside.iter().map(|o| !o).collect();
    Bitmap::from_vec(b.width(), b.height(), data).unwrap()
}
