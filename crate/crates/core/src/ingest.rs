//! Frame-stride planning, frame extraction, band pairing by shared filename
//! stem, and capture-metadata parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Band, Error, Result};

/// Extensions recognised as frame images when scanning band directories.
pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("external decoder not found: `{0}`")]
    DecoderNotFound(String),
    #[error("external decoder `{tool}` failed: {detail}")]
    DecodeFailed { tool: String, detail: String },
    #[error("no image files in RGB directory {0}")]
    EmptyRgbDir(String),
    #[error("malformed capture stem `{stem}`: bad {field} token `{token}`")]
    MetaParse { stem: String, field: &'static str, token: String },
    #[error("invalid sensor profile: {0}")]
    InvalidProfile(String),
}

impl IngestError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, IngestError::DecoderNotFound(_) | IngestError::DecodeFailed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorProfile {
    pub name: String,
    pub width_px: u32,
    pub height_px: u32,
    pub fov_deg: f64,
    pub band: Band,
}

impl SensorProfile {
    pub fn new(name: impl Into<String>, width_px: u32, height_px: u32, fov_deg: f64, band: Band) -> Result<Self> {
        let profile = SensorProfile { name: name.into(), width_px, height_px, fov_deg, band };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(IngestError::InvalidProfile(format!("{}: zero dimension", self.name)));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 360.0) {
            return Err(IngestError::InvalidProfile(format!("{}: fov {} out of (0, 360)", self.name, self.fov_deg)));
        }
        Ok(())
    }

    /// RunCam 5 Orange: 1280x1024, 145 degree FOV.
    pub fn default_rgb() -> Self {
        SensorProfile { name: "runcam5-orange".into(), width_px: 1280, height_px: 1024, fov_deg: 145.0, band: Band::Rgb }
    }

    /// FLIR Vue Pro R: 640x512, 45 degree FOV.
    pub fn default_lwir() -> Self {
        SensorProfile { name: "flir-vue-pro-r".into(), width_px: 640, height_px: 512, fov_deg: 45.0, band: Band::Lwir }
    }

    /// Fused frames are produced at the LWIR resolution.
    pub fn default_fused() -> Self {
        SensorProfile { name: "rgb-lwir-fused".into(), width_px: 640, height_px: 512, fov_deg: 45.0, band: Band::RgbLwir }
    }

    pub fn default_for(band: Band) -> Self {
        match band {
            Band::Rgb => Self::default_rgb(),
            Band::Lwir => Self::default_lwir(),
            Band::RgbLwir => Self::default_fused(),
        }
    }
}

/// Time-of-day bucket of a capture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Period {
    PreSunrise,
    PostSunrise,
    Noon,
    PreSunset,
    PostSunset,
}

impl Period {
    pub const ALL: [Period; 5] =
        [Period::PreSunrise, Period::PostSunrise, Period::Noon, Period::PreSunset, Period::PostSunset];

    pub fn token(self) -> &'static str {
        match self {
            Period::PreSunrise => "presunrise",
            Period::PostSunrise => "postsunrise",
            Period::Noon => "noon",
            Period::PreSunset => "presunset",
            Period::PostSunset => "postsunset",
        }
    }

    pub fn is_night(self) -> bool {
        matches!(self, Period::PreSunrise | Period::PostSunset)
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Period {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Period::ALL.into_iter().find(|p| p.token() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureMeta {
    pub elevation_m: f64,
    pub period: Period,
    pub frame_index: u64,
    pub site: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePair {
    pub pair_id: String,
    pub images: BTreeMap<Band, PathBuf>,
    /// `None` when the stem does not follow the capture naming convention
    /// and no override was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<CaptureMeta>,
}

/// Indices of the frames kept when sampling every `fstride`-th frame.
pub fn plan_fstride(frame_count: u64, fstride: u64) -> Result<Vec<u64>, IngestError> {
    if fstride == 0 {
        return Err(IngestError::InvalidParameter("fstride must be >= 1".into()));
    }
    Ok((0..frame_count).step_by(fstride as usize).collect())
}

/// Zero-padded frame file name, e.g. `000100.png`.
pub fn frame_file_name(index: u64, extension: &str) -> String {
    format!("{index:06}.{extension}")
}

/// Something frames can be pulled out of.
pub trait FrameSource {
    /// Writes the frames selected by [`plan_fstride`] into `out_dir`, named
    /// with [`frame_file_name`]. Returns the written paths in frame order.
    fn extract(&self, fstride: u64, out_dir: &Path, extension: &str) -> Result<Vec<PathBuf>>;
}

/// Video decoded by an external ffmpeg-compatible program.
///
/// The program is invoked as
/// `<program> -nostdin -loglevel error -i <video> -vf select=not(mod(n\,S)) -vsync vfr <staging>/%06d.<ext>`
/// and is expected to write the selected frames numbered from 1.
#[derive(Debug, Clone)]
pub struct ExternalDecoder {
    pub program: String,
    pub video: PathBuf,
}

impl ExternalDecoder {
    pub fn ffmpeg(video: impl Into<PathBuf>) -> Self {
        ExternalDecoder { program: "ffmpeg".into(), video: video.into() }
    }
}

impl FrameSource for ExternalDecoder {
    fn extract(&self, fstride: u64, out_dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
        if fstride == 0 {
            return Err(IngestError::InvalidParameter("fstride must be >= 1".into()).into());
        }
        let staging = out_dir.join(".matt-extract");
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;

        let status = Command::new(&self.program)
            .arg("-nostdin")
            .args(["-loglevel", "error", "-i"])
            .arg(&self.video)
            .arg("-vf")
            .arg(format!("select=not(mod(n\\,{fstride}))"))
            .args(["-vsync", "vfr"])
            .arg(staging.join(format!("%06d.{extension}")))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .output();
        let output = match status {
            Ok(o) => o,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                let _ = fs::remove_dir_all(&staging);
                return Err(IngestError::DecoderNotFound(self.program.clone()).into());
            }
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                return Err(IngestError::DecodeFailed { tool: self.program.clone(), detail: e.to_string() }.into());
            }
        };
        if !output.status.success() {
            let _ = fs::remove_dir_all(&staging);
            return Err(IngestError::DecodeFailed {
                tool: self.program.clone(),
                detail: format!("{}: {}", output.status, String::from_utf8_lossy(&output.stderr).trim()),
            }
            .into());
        }

        let mut staged = list_files(&staging)?;
        staged.sort();
        let mut written = Vec::with_capacity(staged.len());
        for (k, src) in staged.iter().enumerate() {
            let dst = out_dir.join(frame_file_name(k as u64 * fstride, extension));
            fs::rename(src, &dst).map_err(|e| Error::io(&dst, e))?;
            written.push(dst);
        }
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(written)
    }
}

/// A directory holding every frame of a clip as individual images, in
/// lexicographic order.
#[derive(Debug, Clone)]
pub struct FrameDirectory {
    pub dir: PathBuf,
}

impl FrameSource for FrameDirectory {
    fn extract(&self, fstride: u64, out_dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
        let mut frames = list_images(&self.dir)?;
        frames.sort();
        let plan = plan_fstride(frames.len() as u64, fstride)?;
        let mut written = Vec::with_capacity(plan.len());
        for idx in plan {
            let src = &frames[idx as usize];
            let dst = out_dir.join(frame_file_name(idx, extension));
            let src_ext = src.extension().and_then(|e| e.to_str()).unwrap_or_default();
            if src_ext.eq_ignore_ascii_case(extension) {
                fs::copy(src, &dst).map_err(|e| Error::io(&dst, e))?;
            } else {
                let img = image::open(src).map_err(|e| Error::image(src, e))?;
                img.save(&dst).map_err(|e| Error::image(&dst, e))?;
            }
            written.push(dst);
        }
        Ok(written)
    }
}

/// Extracts every `fstride`-th frame from `source` into `out_dir`.
pub fn extract_frames(source: &dyn FrameSource, fstride: u64, out_dir: &Path, extension: &str) -> Result<usize> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(source.extract(fstride, out_dir, extension)?.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnpairedEntry {
    pub stem: String,
    pub missing: Vec<Band>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairingOutcome {
    pub pairs: Vec<FramePair>,
    pub unpaired: Vec<UnpairedEntry>,
}

/// Stem → capture metadata overrides, loaded from a JSON object.
pub type MetaOverrides = BTreeMap<String, CaptureMeta>;

pub fn load_meta_overrides(path: &Path) -> Result<MetaOverrides> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pairs frames across band directories by shared filename stem.
///
/// Every stem in the RGB directory yields either a complete [`FramePair`] or
/// an [`UnpairedEntry`] naming the bands it lacks. Output is sorted by stem.
pub fn pair_frames(band_dirs: &BTreeMap<Band, PathBuf>, overrides: &MetaOverrides) -> Result<PairingOutcome> {
    let rgb_dir = band_dirs
        .get(&Band::Rgb)
        .ok_or_else(|| IngestError::InvalidParameter("an RGB directory is required".into()))?;

    let index = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        let mut by_stem = BTreeMap::new();
        for path in list_images(dir)? {
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            // several extensions for one stem: keep the lexicographically first path
            by_stem
                .entry(stem.to_string())
                .and_modify(|p: &mut PathBuf| {
                    if path < *p {
                        *p = path.clone();
                    }
                })
                .or_insert_with(|| path.clone());
        }
        Ok(by_stem)
    };

    let rgb = index(rgb_dir)?;
    if rgb.is_empty() {
        return Err(IngestError::EmptyRgbDir(rgb_dir.display().to_string()).into());
    }
    let others: BTreeMap<Band, BTreeMap<String, PathBuf>> = band_dirs
        .iter()
        .filter(|(b, _)| **b != Band::Rgb)
        .map(|(b, d)| Ok((*b, index(d)?)))
        .collect::<Result<_>>()?;

    let mut outcome = PairingOutcome::default();
    for (stem, rgb_path) in rgb {
        let missing: Vec<Band> =
            others.iter().filter(|(_, files)| !files.contains_key(&stem)).map(|(b, _)| *b).collect();
        if !missing.is_empty() {
            outcome.unpaired.push(UnpairedEntry { stem, missing });
            continue;
        }
        let mut images = BTreeMap::new();
        images.insert(Band::Rgb, rgb_path);
        for (band, files) in &others {
            images.insert(*band, files[&stem].clone());
        }
        let meta = overrides.get(&stem).cloned().or_else(|| parse_capture_meta(&stem).ok());
        outcome.pairs.push(FramePair { pair_id: stem, images, meta });
    }
    Ok(outcome)
}

/// Parses `{site}_{elev}m_{period}_{frame_index}`. The site may itself
/// contain underscores; the other three fields are taken from the right.
pub fn parse_capture_meta(stem: &str) -> Result<CaptureMeta, IngestError> {
    let err = |field, token: &str| IngestError::MetaParse { stem: stem.to_string(), field, token: token.to_string() };

    let mut parts = stem.rsplitn(4, '_');
    let frame_tok = parts.next().unwrap_or_default();
    let period_tok = parts.next().ok_or_else(|| err("period", ""))?;
    let elev_tok = parts.next().ok_or_else(|| err("elevation", ""))?;
    let site = parts.next().ok_or_else(|| err("site", ""))?;

    if frame_tok.is_empty() || !frame_tok.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err("frame_index", frame_tok));
    }
    let frame_index = frame_tok.parse::<u64>().map_err(|_| err("frame_index", frame_tok))?;
    let period = period_tok.parse::<Period>().map_err(|_| err("period", period_tok))?;
    let elevation_m = elev_tok
        .strip_suffix('m')
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| v.is_finite() && *v >= 0.0)
        .ok_or_else(|| err("elevation", elev_tok))?;
    if site.is_empty() || site.chars().any(char::is_whitespace) {
        return Err(err("site", site));
    }
    Ok(CaptureMeta { elevation_m, period, frame_index, site: site.to_string() })
}

/// Inverse of [`parse_capture_meta`].
pub fn format_capture_meta(meta: &CaptureMeta) -> String {
    format!("{}_{}m_{}_{:06}", meta.site, meta.elevation_m, meta.period, meta.frame_index)
}

fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            out.push(path);
        }
    }
    Ok(out)
}

/// Image files directly inside `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = list_files(dir)?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        })
        .collect();
    files.sort();
    Ok(files)
}
