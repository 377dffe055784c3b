//! Directory-level augmentation and YOLO dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imgproc::{self, AugmentOp, Sample};
use crate::ingest::list_images;
use crate::maskio::{self, LabelFile, LabelMode};
use crate::{Band, Error, Result, TOOL_VERSION};

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];
const RATIO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("split ratios {0:?} must be 2 or 3 non-negative values summing to 1")]
    InvalidRatios(Vec<f64>),
    #[error("{band}: images without labels {missing_labels:?}; labels without images {missing_images:?}")]
    Mismatch { band: Band, missing_labels: Vec<String>, missing_images: Vec<String> },
    #[error("no input images")]
    Empty,
}

fn stem_of(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Counts of one augmentation run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub originals: usize,
    pub written: usize,
}

/// Expands every image in `images` (labels read from `labels/<stem>.txt`,
/// absent files meaning no objects) into `out/images` and `out/labels`.
pub fn augment_directory(images: &Path, labels: &Path, ops: &[AugmentOp], out: &Path, mode: LabelMode) -> Result<AugmentSummary> {
    let inputs = list_images(images)?
        .into_iter()
        .map(|path| {
            let stem = stem_of(&path);
            let label_path = labels.join(format!("{stem}.txt"));
            let labels = if label_path.exists() {
                maskio::read_label_file(&label_path, mode)?
            } else {
                LabelFile { pair_id: stem, records: Vec::new() }
            };
            Ok((path, labels))
        })
        .collect::<Result<Vec<_>>>()?;
    augment_files(&inputs, ops, out, mode)
}

/// Expands each `(image, labels)` input into `out/images` and `out/labels`,
/// naming files after the label file's pair id.
pub fn augment_files(inputs: &[(PathBuf, LabelFile)], ops: &[AugmentOp], out: &Path, mode: LabelMode) -> Result<AugmentSummary> {
    ops.iter().try_for_each(AugmentOp::validate)?;
    let (img_out, lbl_out) = (out.join("images"), out.join("labels"));
    for d in [&img_out, &lbl_out] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let written: Vec<usize> = inputs
        .par_iter()
        .map(|(path, labels)| -> Result<usize> {
            let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("png").to_ascii_lowercase();
            let image = image::open(path).map_err(|e| Error::image(path, e))?;
            let sample = Sample { stem: labels.pair_id.clone(), image, labels: labels.clone() };
            let variants = imgproc::expand_sample(&sample, ops)?;
            for v in &variants {
                save_image(&v.image, &img_out.join(format!("{}.{ext}", v.stem)))?;
                maskio::write_label_file(&lbl_out.join(format!("{}.txt", v.stem)), &v.labels, mode)?;
            }
            Ok(variants.len())
        })
        .collect::<Result<_>>()?;
    Ok(AugmentSummary { originals: inputs.len(), written: written.iter().sum() })
}

fn save_image(img: &image::DynamicImage, path: &Path) -> Result<()> {
    let is_jpeg = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("jpg") || e.eq_ignore_ascii_case("jpeg"));
    let result = if is_jpeg { img.to_rgb8().save(path) } else { img.save(path) };
    result.map_err(|e| Error::image(path, e))
}

/// Images and labels of one band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSource {
    pub band: Band,
    pub images: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: u32,
    pub model_tag: String,
    pub image_size: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { epochs: 200, model_tag: "yolov8s".into(), image_size: 640 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub ontology: Vec<String>,
    pub seed: u64,
    pub ratios: Vec<f64>,
    /// band -> split -> image paths relative to the dataset root.
    pub splits: BTreeMap<Band, BTreeMap<String, Vec<String>>>,
    pub excluded: Vec<String>,
    pub training_config: TrainingConfig,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn image_count(&self, band: Band) -> usize {
        self.splits.get(&band).map(|s| s.values().map(Vec::len).sum()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembleOptions {
    pub ratios: Vec<f64>,
    pub seed: u64,
    pub ontology: Vec<String>,
    pub training: TrainingConfig,
    /// Pair ids (base stems) left out, e.g. rejected during review.
    pub exclude: BTreeSet<String>,
    /// Hash of the configuration that produced the run; derived from the
    /// options when absent.
    pub config_hash: Option<String>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            ratios: vec![0.8, 0.2],
            seed: 0,
            ontology: vec!["car".into(), "truck".into()],
            training: TrainingConfig::default(),
            exclude: BTreeSet::new(),
            config_hash: None,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Split sizes for `n` items: floor of each share, then the remainder one
/// at a time to the largest fractional parts (earlier splits win ties).
pub fn split_counts(n: usize, ratios: &[f64]) -> Result<Vec<usize>, DatasetError> {
    let valid = matches!(ratios.len(), 2 | 3)
        && ratios.iter().all(|r| r.is_finite() && *r >= 0.0)
        && (ratios.iter().sum::<f64>() - 1.0).abs() <= RATIO_TOLERANCE;
    if !valid {
        return Err(DatasetError::InvalidRatios(ratios.to_vec()));
    }
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - counts[b] as f64).total_cmp(&(exact[a] - counts[a] as f64)));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    Ok(counts)
}

/// Image and label file of one dataset entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DatasetItem {
    pub stem: String,
    pub image: PathBuf,
    pub label: PathBuf,
}

/// Entries of one band, keyed by stem.
#[derive(Debug, Clone, PartialEq)]
pub struct BandItems {
    pub band: Band,
    pub items: Vec<DatasetItem>,
}

/// Lists a band's images and labels, failing with every unmatched stem
/// when the two directories disagree.
pub fn scan_band(src: &BandSource) -> Result<BandItems> {
    let images: BTreeMap<String, PathBuf> = list_images(&src.images)?.into_iter().map(|p| (stem_of(&p), p)).collect();
    let mut labels = BTreeSet::new();
    if src.labels.is_dir() {
        for entry in fs::read_dir(&src.labels).map_err(|e| Error::io(&src.labels, e))? {
            let path = entry.map_err(|e| Error::io(&src.labels, e))?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                labels.insert(stem_of(&path));
            }
        }
    }
    let missing_labels: Vec<String> = images.keys().filter(|s| !labels.contains(*s)).cloned().collect();
    let missing_images: Vec<String> = labels.iter().filter(|s| !images.contains_key(*s)).cloned().collect();
    if !missing_labels.is_empty() || !missing_images.is_empty() {
        return Err(DatasetError::Mismatch { band: src.band, missing_labels, missing_images }.into());
    }
    let items = images
        .into_iter()
        .map(|(stem, image)| DatasetItem { label: src.labels.join(format!("{stem}.txt")), stem, image })
        .collect();
    Ok(BandItems { band: src.band, items })
}

/// Writes a YOLO dataset under `out/<band>/{images,labels}/<split>/` with a
/// `data.yaml` per band and `manifest.json` at the root.
///
/// Splitting is by original stem, so augmented variants follow their
/// original, and one assignment is shared by all bands. The same inputs
/// and seed always produce the same files.
pub fn assemble(sources: &[BandSource], out: &Path, opts: &AssembleOptions) -> Result<DatasetManifest> {
    split_counts(0, &opts.ratios)?;
    let scanned: Vec<BandItems> = sources.iter().map(scan_band).collect::<Result<_>>()?;
    assemble_items(&scanned, out, opts)
}

/// [`assemble`] over already-listed entries.
pub fn assemble_items(bands: &[BandItems], out: &Path, opts: &AssembleOptions) -> Result<DatasetManifest> {
    split_counts(0, &opts.ratios)?;

    let mut bases: BTreeSet<String> = BTreeSet::new();
    let mut excluded: BTreeSet<String> = BTreeSet::new();
    for band in bands {
        for item in &band.items {
            let base = imgproc::base_stem(&item.stem).to_string();
            if opts.exclude.contains(&base) {
                excluded.insert(base);
            } else {
                bases.insert(base);
            }
        }
    }
    if bases.is_empty() {
        return Err(DatasetError::Empty.into());
    }

    let mut order: Vec<String> = bases.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let counts = split_counts(order.len(), &opts.ratios)?;
    let mut split_of: BTreeMap<&str, &str> = BTreeMap::new();
    let mut cursor = 0;
    for (k, &count) in counts.iter().enumerate() {
        for base in &order[cursor..cursor + count] {
            split_of.insert(base, SPLIT_NAMES[k]);
        }
        cursor += count;
    }
    let split_names = &SPLIT_NAMES[..opts.ratios.len()];

    let mut splits = BTreeMap::new();
    for BandItems { band, items } in bands {
        let band_root = out.join(band.dir_name());
        let mut lists: BTreeMap<String, Vec<String>> = split_names.iter().map(|s| (s.to_string(), Vec::new())).collect();
        for split in split_names {
            for kind in ["images", "labels"] {
                let d = band_root.join(kind).join(split);
                fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
            }
        }
        let mut items: Vec<&DatasetItem> = items.iter().collect();
        items.sort();
        for item in items {
            let Some(&split) = split_of.get(imgproc::base_stem(&item.stem)) else { continue };
            let ext = item.image.extension().and_then(|e| e.to_str()).unwrap_or_default();
            let file_name = format!("{}.{ext}", item.stem);
            let img_dst = band_root.join("images").join(split).join(&file_name);
            fs::copy(&item.image, &img_dst).map_err(|e| Error::io(&img_dst, e))?;
            let lbl_dst = band_root.join("labels").join(split).join(format!("{}.txt", item.stem));
            if item.label.exists() {
                fs::copy(&item.label, &lbl_dst).map_err(|e| Error::io(&lbl_dst, e))?;
            } else {
                fs::write(&lbl_dst, "").map_err(|e| Error::io(&lbl_dst, e))?;
            }
            lists.get_mut(split).expect("split exists").push(format!("{}/images/{split}/{file_name}", band.dir_name()));
        }
        let yaml = data_yaml(split_names, &opts.ontology);
        let yaml_path = band_root.join("data.yaml");
        fs::write(&yaml_path, yaml).map_err(|e| Error::io(&yaml_path, e))?;
        splits.insert(*band, lists);
    }

    let config_hash = opts.config_hash.clone().unwrap_or_else(|| {
        let desc = format!(
            "{:?}|{}|{:?}|{:?}|{:?}",
            opts.ratios, opts.seed, opts.ontology, opts.training, opts.exclude
        );
        sha256_hex(desc.as_bytes())
    });
    let manifest = DatasetManifest {
        ontology: opts.ontology.clone(),
        seed: opts.seed,
        ratios: opts.ratios.clone(),
        splits,
        excluded: excluded.into_iter().collect(),
        training_config: opts.training.clone(),
        provenance: Provenance { tool_version: TOOL_VERSION.to_string(), config_hash },
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn data_yaml(splits: &[&str], ontology: &[String]) -> String {
    let mut out = String::from("path: .\n");
    for s in splits {
        writeln!(out, "{s}: images/{s}").unwrap();
    }
    writeln!(out, "nc: {}", ontology.len()).unwrap();
    let names: Vec<String> = ontology.iter().map(|n| serde_json::to_string(n).expect("string serializes")).collect();
    writeln!(out, "names: [{}]", names.join(", ")).unwrap();
    out
}
