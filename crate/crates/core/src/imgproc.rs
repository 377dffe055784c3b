//! Augmentation filters, label-consistent flips, and RGB/LWIR band fusion.
//!
//! Every neighbourhood filter reflects at the border with the edge pixel
//! repeated (`... 2 1 0 | 0 1 2 ...`).

use std::fmt;
use std::str::FromStr;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Pixel, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::maskio::{BBoxNorm, Geometry, LabelFile, LabelRecord, PolygonNorm};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FilterError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
}

pub type Raster<P> = ImageBuffer<P, Vec<u8>>;

/// Symmetric reflection of index `i` into `0..n`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Sampled Gaussian of radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    gaussian_kernel_with_radius(sigma, (3.0 * sigma).ceil() as usize)
}

fn gaussian_kernel_with_radius(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Single-channel float plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> f64 {
        self.data[reflect(y, self.height) * self.width + reflect(x, self.width)]
    }
}

fn split_planes<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>) -> Vec<Plane> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ch = P::CHANNEL_COUNT as usize;
    (0..ch)
        .map(|c| Plane { width: w, height: h, data: img.as_raw().iter().skip(c).step_by(ch).map(|v| *v as f64).collect() })
        .collect()
}

fn merge_planes<P: Pixel<Subpixel = u8> + 'static>(planes: &[Plane], f: impl Fn(f64) -> f64) -> Raster<P> {
    let (w, h) = (planes[0].width, planes[0].height);
    let ch = planes.len();
    let mut raw = vec![0u8; w * h * ch];
    for (c, plane) in planes.iter().enumerate() {
        for (i, v) in plane.data.iter().enumerate() {
            raw[i * ch + c] = to_u8(f(*v));
        }
    }
    ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer sized from planes")
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Luma plane; three-channel inputs use weights 0.299/0.587/0.114, alpha is
/// ignored.
pub fn luma_plane<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>) -> Plane {
    let planes = split_planes(img);
    if planes.len() < 3 {
        return planes.into_iter().next().unwrap();
    }
    let data = (0..planes[0].data.len())
        .map(|i| 0.299 * planes[0].data[i] + 0.587 * planes[1].data[i] + 0.114 * planes[2].data[i])
        .collect();
    Plane { width: planes[0].width, height: planes[0].height, data }
}

/// Separable convolution: `kx` along rows, then `ky` along columns.
pub fn convolve_separable(plane: &Plane, kx: &[f64], ky: &[f64]) -> Plane {
    let (w, h) = (plane.width, plane.height);
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kx.iter().enumerate().map(|(i, k)| k * plane.at(x as isize + i as isize - rx, y as isize)).sum();
        }
    }
    let tmp = Plane { width: w, height: h, data: tmp };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = ky.iter().enumerate().map(|(i, k)| k * tmp.at(x as isize, y as isize + i as isize - ry)).sum();
        }
    }
    Plane { width: w, height: h, data: out }
}

fn blur_plane(plane: &Plane, sigma: f64) -> Plane {
    let k = gaussian_kernel(sigma);
    convolve_separable(plane, &k, &k)
}

fn check_sigma(sigma: f64) -> Result<(), FilterError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(FilterError::InvalidParameter(format!("sigma must be > 0, got {sigma}")))
    }
}

/// Mirrors the image about its vertical axis.
pub fn flip_h<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>) -> Raster<P> {
    image::imageops::flip_horizontal(img)
}

/// Mirrors label geometry to match [`flip_h`]: `x -> 1 - x`. Polygon vertex
/// order is reversed so the winding is preserved.
pub fn flip_labels_h(labels: &LabelFile) -> LabelFile {
    let records = labels
        .records
        .iter()
        .map(|r| {
            let geometry = match &r.geometry {
                Geometry::BBox(b) => Geometry::BBox(BBoxNorm { cx: 1.0 - b.cx, ..*b }),
                Geometry::Polygon(p) => {
                    let verts = p.vertices().iter().rev().map(|&(x, y)| (1.0 - x, y)).collect();
                    Geometry::Polygon(PolygonNorm::new(verts).expect("mirroring preserves polygon invariants"))
                }
            };
            LabelRecord { category_id: r.category_id, geometry }
        })
        .collect();
    LabelFile { pair_id: labels.pair_id.clone(), records }
}

pub fn gaussian_blur<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>, sigma: f64) -> Result<Raster<P>, FilterError> {
    check_sigma(sigma)?;
    let planes: Vec<Plane> = split_planes(img).iter().map(|p| blur_plane(p, sigma)).collect();
    Ok(merge_planes(&planes, |v| v))
}

/// Gradient magnitude `sqrt(gx^2 + gy^2)` with 3x3 Sobel kernels on the luma
/// plane, clamped to `[0, 255]`.
pub fn sobel_xy<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>) -> GrayImage {
    let luma = luma_plane(img);
    let gx = convolve_separable(&luma, &[-1.0, 0.0, 1.0], &[1.0, 2.0, 1.0]);
    let gy = convolve_separable(&luma, &[1.0, 2.0, 1.0], &[-1.0, 0.0, 1.0]);
    let mag = Plane {
        width: luma.width,
        height: luma.height,
        data: gx.data.iter().zip(&gy.data).map(|(x, y)| x.hypot(*y)).collect(),
    };
    merge_planes::<Luma<u8>>(&[mag], |v| v)
}

/// Difference of Gaussians, `blur(s1) - blur(s2) + 128`, clamped.
pub fn dog<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>, sigma1: f64, sigma2: f64) -> Result<Raster<P>, FilterError> {
    check_sigma(sigma1)?;
    check_sigma(sigma2)?;
    if sigma1 >= sigma2 {
        return Err(FilterError::InvalidParameter(format!("dog needs sigma1 < sigma2, got {sigma1} >= {sigma2}")));
    }
    let planes: Vec<Plane> = split_planes(img)
        .iter()
        .map(|p| {
            let (a, b) = (blur_plane(p, sigma1), blur_plane(p, sigma2));
            Plane { width: p.width, height: p.height, data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect() }
        })
        .collect();
    Ok(merge_planes(&planes, |v| v + 128.0))
}

/// Kernel used for the local mean of [`gaussian_threshold`]. Sigma follows
/// the usual block-size rule `0.3 * ((block - 1) / 2 - 1) + 0.8`.
pub fn threshold_kernel(block_size: u32) -> Vec<f64> {
    let sigma = 0.3 * ((block_size as f64 - 1.0) * 0.5 - 1.0) + 0.8;
    gaussian_kernel_with_radius(sigma, (block_size / 2) as usize)
}

/// Adaptive threshold: 255 where the luma exceeds its Gaussian-weighted
/// local mean minus `bias`, else 0.
pub fn gaussian_threshold<P: Pixel<Subpixel = u8> + 'static>(img: &Raster<P>, block_size: u32, bias: f64) -> Result<GrayImage, FilterError> {
    if block_size < 3 || block_size.is_multiple_of(2) {
        return Err(FilterError::InvalidParameter(format!("block size must be odd and >= 3, got {block_size}")));
    }
    let luma = luma_plane(img);
    let k = threshold_kernel(block_size);
    let mean = convolve_separable(&luma, &k, &k);
    let out = Plane {
        width: luma.width,
        height: luma.height,
        data: luma.data.iter().zip(&mean.data).map(|(v, m)| if *v > m - bias { 255.0 } else { 0.0 }).collect(),
    };
    Ok(merge_planes::<Luma<u8>>(&[out], |v| v))
}

/// Per-channel `alpha * rgb + (1 - alpha) * lwir`, rounded half-up.
pub fn fuse_bands(rgb: &RgbImage, lwir: &RgbImage, alpha: f64) -> Result<RgbImage, FilterError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FilterError::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    if rgb.dimensions() != lwir.dimensions() {
        return Err(FilterError::DimensionMismatch(rgb.dimensions(), lwir.dimensions()));
    }
    let raw = rgb
        .as_raw()
        .iter()
        .zip(lwir.as_raw())
        .map(|(a, b)| (alpha * *a as f64 + (1.0 - alpha) * *b as f64 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(RgbImage::from_raw(rgb.width(), rgb.height(), raw).expect("same dimensions"))
}

/// Conventional defaults; every value is overridable through config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub blur_sigma: f64,
    pub dog_sigma1: f64,
    pub dog_sigma2: f64,
    pub thresh_block: u32,
    pub thresh_bias: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { blur_sigma: 2.0, dog_sigma1: 1.0, dog_sigma2: 2.0, thresh_block: 11, thresh_bias: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    FlipH,
    Blur { sigma: f64 },
    FlipBlur { sigma: f64 },
    SobelXY,
    DoG { sigma1: f64, sigma2: f64 },
    GaussThresh { block_size: u32, bias: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    FlipH,
    Blur,
    FlipBlur,
    SobelXY,
    DoG,
    GaussThresh,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 6] = [
        AugmentKind::FlipH,
        AugmentKind::Blur,
        AugmentKind::FlipBlur,
        AugmentKind::SobelXY,
        AugmentKind::DoG,
        AugmentKind::GaussThresh,
    ];

    /// Name used on the command line and as the filename suffix.
    pub fn tag(self) -> &'static str {
        match self {
            AugmentKind::FlipH => "fliph",
            AugmentKind::Blur => "blur",
            AugmentKind::FlipBlur => "flipblur",
            AugmentKind::SobelXY => "sobelxy",
            AugmentKind::DoG => "dog",
            AugmentKind::GaussThresh => "gaussthresh",
        }
    }

    pub fn with_params(self, p: &FilterParams) -> AugmentOp {
        match self {
            AugmentKind::FlipH => AugmentOp::FlipH,
            AugmentKind::Blur => AugmentOp::Blur { sigma: p.blur_sigma },
            AugmentKind::FlipBlur => AugmentOp::FlipBlur { sigma: p.blur_sigma },
            AugmentKind::SobelXY => AugmentOp::SobelXY,
            AugmentKind::DoG => AugmentOp::DoG { sigma1: p.dog_sigma1, sigma2: p.dog_sigma2 },
            AugmentKind::GaussThresh => AugmentOp::GaussThresh { block_size: p.thresh_block, bias: p.thresh_bias },
        }
    }
}

impl fmt::Display for AugmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AugmentKind {
    type Err = FilterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "sobel" => return Ok(AugmentKind::SobelXY),
            "gthresh" | "threshold" => return Ok(AugmentKind::GaussThresh),
            _ => {}
        }
        AugmentKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| FilterError::InvalidParameter(format!("unknown augmentation `{s}`")))
    }
}

/// Parses a comma-separated op list such as `blur,fliph,flipblur`.
pub fn parse_ops(list: &str, params: &FilterParams) -> Result<Vec<AugmentOp>, FilterError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<AugmentKind>().map(|k| k.with_params(params)))
        .collect()
}

impl AugmentOp {
    pub fn kind(&self) -> AugmentKind {
        match self {
            AugmentOp::FlipH => AugmentKind::FlipH,
            AugmentOp::Blur { .. } => AugmentKind::Blur,
            AugmentOp::FlipBlur { .. } => AugmentKind::FlipBlur,
            AugmentOp::SobelXY => AugmentKind::SobelXY,
            AugmentOp::DoG { .. } => AugmentKind::DoG,
            AugmentOp::GaussThresh { .. } => AugmentKind::GaussThresh,
        }
    }

    pub fn tag(&self) -> &'static str {
        self.kind().tag()
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        match *self {
            AugmentOp::Blur { sigma } | AugmentOp::FlipBlur { sigma } => check_sigma(sigma),
            AugmentOp::DoG { sigma1, sigma2 } => {
                check_sigma(sigma1)?;
                check_sigma(sigma2)?;
                if sigma1 >= sigma2 {
                    return Err(FilterError::InvalidParameter(format!("dog needs sigma1 < sigma2, got {sigma1} >= {sigma2}")));
                }
                Ok(())
            }
            AugmentOp::GaussThresh { block_size, .. } if block_size < 3 || block_size.is_multiple_of(2) => {
                Err(FilterError::InvalidParameter(format!("block size must be odd and >= 3, got {block_size}")))
            }
            _ => Ok(()),
        }
    }

    pub fn flips(&self) -> bool {
        matches!(self, AugmentOp::FlipH | AugmentOp::FlipBlur { .. })
    }

    pub fn apply_image(&self, img: &DynamicImage) -> Result<DynamicImage, FilterError> {
        match img {
            DynamicImage::ImageLuma8(g) => self.apply_raster(g),
            other => self.apply_raster(&other.to_rgb8()),
        }
    }

    fn apply_raster<P>(&self, img: &Raster<P>) -> Result<DynamicImage, FilterError>
    where
        P: Pixel<Subpixel = u8> + 'static,
        DynamicImage: From<Raster<P>>,
    {
        Ok(match *self {
            AugmentOp::FlipH => flip_h(img).into(),
            AugmentOp::Blur { sigma } => gaussian_blur(img, sigma)?.into(),
            AugmentOp::FlipBlur { sigma } => gaussian_blur(&flip_h(img), sigma)?.into(),
            AugmentOp::SobelXY => sobel_xy(img).into(),
            AugmentOp::DoG { sigma1, sigma2 } => dog(img, sigma1, sigma2)?.into(),
            AugmentOp::GaussThresh { block_size, bias } => gaussian_threshold(img, block_size, bias)?.into(),
        })
    }

    pub fn apply_labels(&self, labels: &LabelFile) -> LabelFile {
        if self.flips() {
            flip_labels_h(labels)
        } else {
            labels.clone()
        }
    }
}

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stem: String,
    pub image: DynamicImage,
    pub labels: LabelFile,
}

/// Variant stem for an op, e.g. `0001_flipblur`.
pub fn variant_stem(stem: &str, op: &AugmentOp) -> String {
    format!("{stem}_{}", op.tag())
}

/// Strips a trailing augmentation suffix, mapping variants to the stem of
/// their original.
pub fn base_stem(stem: &str) -> &str {
    for kind in AugmentKind::ALL {
        if let Some(base) = stem.strip_suffix(kind.tag()).and_then(|s| s.strip_suffix('_')) {
            if !base.is_empty() {
                return base;
            }
        }
    }
    stem
}

/// The original followed by one variant per op.
pub fn expand_sample(sample: &Sample, ops: &[AugmentOp]) -> Result<Vec<Sample>, FilterError> {
    let mut out = Vec::with_capacity(ops.len() + 1);
    out.push(sample.clone());
    for op in ops {
        let stem = variant_stem(&sample.stem, op);
        let mut labels = op.apply_labels(&sample.labels);
        labels.pair_id = stem.clone();
        out.push(Sample { stem, image: op.apply_image(&sample.image)?, labels });
    }
    Ok(out)
}

/// Every original plus one variant per op, grouped by original in input
/// order.
pub fn expand_dataset(samples: &[Sample], ops: &[AugmentOp]) -> Result<Vec<Sample>, FilterError> {
    ops.iter().try_for_each(AugmentOp::validate)?;
    let groups: Vec<Vec<Sample>> = samples.par_iter().map(|s| expand_sample(s, ops)).collect::<Result<_, _>>()?;
    Ok(groups.into_iter().flatten().collect())
}
