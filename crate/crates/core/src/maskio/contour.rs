//! Outer-contour tracing on the pixel-boundary grid followed by
//! Douglas–Peucker simplification.
//!
//! Vertices live on integer grid corners: pixel `(r, c)` is the unit square
//! with corners `(c, r)` and `(c + 1, r + 1)`. Boundary edges are oriented so
//! the foreground lies on their right in screen coordinates (y down), which
//! makes outer loops positive under [`shoelace_area`] and holes negative.

use super::{Bitmap, Mask, MaskError, PolygonNorm};

/// Default Douglas–Peucker tolerance in pixels.
pub const DEFAULT_SIMPLIFY_EPS_PX: f64 = 1.0;

const RIGHT: u8 = 0;
const DOWN: u8 = 1;
const LEFT: u8 = 2;
const UP: u8 = 3;

#[inline]
fn step(dir: u8) -> (i64, i64) {
    match dir {
        RIGHT => (1, 0),
        DOWN => (0, 1),
        LEFT => (-1, 0),
        _ => (0, -1),
    }
}

/// Signed shoelace area; positive for loops that run clockwise on screen.
pub fn shoelace_area<T: Copy + Into<f64>>(vertices: &[(T, T)]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = (vertices[i].0.into(), vertices[i].1.into());
        let j = (i + 1) % n;
        let (x1, y1) = (vertices[j].0.into(), vertices[j].1.into());
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

/// Traces every boundary loop of `bitmap` and returns the one enclosing the
/// largest area, with collinear vertices removed. Holes are ignored.
///
/// Where two foreground pixels touch only at a corner the trace turns back
/// onto the pixel it came from, so diagonal neighbours are kept apart as
/// 4-connectivity requires.
pub fn trace_outer_contour(bitmap: &Bitmap) -> Result<Vec<(i64, i64)>, MaskError> {
    let (w, h) = (bitmap.width() as usize, bitmap.height() as usize);
    let stride = w + 1;
    let mut out = vec![0u8; stride * (h + 1)];
    let fg = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && bitmap.get(r as u32, c as u32);

    for r in 0..h {
        for c in 0..w {
            if !bitmap.get(r as u32, c as u32) {
                continue;
            }
            let (ri, ci) = (r as isize, c as isize);
            if !fg(ri - 1, ci) {
                out[r * stride + c] |= 1 << RIGHT;
            }
            if !fg(ri, ci + 1) {
                out[r * stride + c + 1] |= 1 << DOWN;
            }
            if !fg(ri + 1, ci) {
                out[(r + 1) * stride + c + 1] |= 1 << LEFT;
            }
            if !fg(ri, ci - 1) {
                out[(r + 1) * stride + c] |= 1 << UP;
            }
        }
    }

    let mut used = vec![0u8; out.len()];
    let mut best: Option<(f64, Vec<(i64, i64)>)> = None;

    for start in 0..out.len() {
        for start_dir in 0..4u8 {
            let bit = 1 << start_dir;
            if out[start] & bit == 0 || used[start] & bit != 0 {
                continue;
            }
            let mut corners = Vec::new();
            let (mut v, mut dir) = (start, start_dir);
            loop {
                used[v] |= 1 << dir;
                let (dx, dy) = step(dir);
                let x = (v % stride) as i64 + dx;
                let y = (v / stride) as i64 + dy;
                let next = y as usize * stride + x as usize;
                let next_dir = [(dir + 1) % 4, dir, (dir + 3) % 4]
                    .into_iter()
                    .find(|d| out[next] & (1 << d) != 0)
                    .expect("boundary edges always continue");
                if next_dir != dir {
                    corners.push((x, y));
                }
                if next == start && next_dir == start_dir {
                    break;
                }
                v = next;
                dir = next_dir;
            }
            let area = shoelace_area(&corners.iter().map(|&(x, y)| (x as f64, y as f64)).collect::<Vec<_>>());
            if best.as_ref().is_none_or(|(a, _)| area > *a) {
                best = Some((area, corners));
            }
        }
    }

    match best {
        Some((area, corners)) if area > 0.0 => Ok(corners),
        _ => Err(MaskError::EmptyMask),
    }
}

/// Outline polygon of a single-component mask, simplified with tolerance
/// `simplify_eps_px` and normalized to the mask frame.
pub fn mask_to_polygon(mask: &Mask, simplify_eps_px: f64) -> Result<PolygonNorm, MaskError> {
    if simplify_eps_px.is_nan() || simplify_eps_px < 0.0 {
        return Err(MaskError::InvalidGeometry(format!("simplify eps {simplify_eps_px} must be >= 0")));
    }
    let bitmap = mask.decode()?;
    let corners: Vec<(f64, f64)> =
        trace_outer_contour(&bitmap)?.into_iter().map(|(x, y)| (x as f64, y as f64)).collect();
    let simplified = if simplify_eps_px > 0.0 { simplify_closed(&corners, simplify_eps_px) } else { corners };
    let (w, h) = (bitmap.width() as f64, bitmap.height() as f64);
    PolygonNorm::new(simplified.into_iter().map(|(x, y)| (x / w, y / h)).collect())
}

fn perpendicular_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs() / len
}

fn simplify_open(points: &[(f64, f64)], eps: f64, keep: &mut [bool]) {
    if points.len() < 3 {
        return;
    }
    let (first, last) = (points[0], points[points.len() - 1]);
    let (idx, dist) = points[1..points.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, &p)| (i + 1, perpendicular_distance(p, first, last)))
        .fold((0, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
    if dist > eps {
        keep[idx] = true;
        simplify_open(&points[..=idx], eps, &mut keep[..=idx]);
        simplify_open(&points[idx..], eps, &mut keep[idx..]);
    }
}

/// Douglas–Peucker on a closed ring, anchored at vertex 0 and the vertex
/// farthest from it.
fn simplify_closed(ring: &[(f64, f64)], eps: f64) -> Vec<(f64, f64)> {
    let n = ring.len();
    if n <= 3 {
        return ring.to_vec();
    }
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (ring[a].0 - ring[0].0).hypot(ring[a].1 - ring[0].1);
            let db = (ring[b].0 - ring[0].0).hypot(ring[b].1 - ring[0].1);
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .unwrap();

    let mut keep = vec![false; n];
    keep[0] = true;
    keep[far] = true;
    simplify_open(&ring[..=far], eps, &mut keep[..=far]);
    let mut tail: Vec<(f64, f64)> = ring[far..].to_vec();
    tail.push(ring[0]);
    let mut tail_keep = vec![false; tail.len()];
    simplify_open(&tail, eps, &mut tail_keep);
    for (i, k) in tail_keep.iter().enumerate().take(tail.len() - 1).skip(1) {
        if *k {
            keep[far + i] = true;
        }
    }

    let mut out: Vec<(f64, f64)> = ring.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
    if out.len() < 3 {
        // both halves collapsed onto the anchor chord; keep the widest vertex
        let extra = (1..n)
            .filter(|&i| i != far)
            .max_by(|&a, &b| {
                perpendicular_distance(ring[a], ring[0], ring[far])
                    .total_cmp(&perpendicular_distance(ring[b], ring[0], ring[far]))
            })
            .unwrap();
        keep[extra] = true;
        out = ring.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
    }
    out
}
