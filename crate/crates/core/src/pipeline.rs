//! Config-driven pipeline runner.
//!
//! A run works inside one directory:
//!
//! ```text
//! <work>/frames/<band>/          extracted frames (extract)
//! <work>/pairs.json              pairing outcome (pair)
//! <work>/masks/<pair>.json       validated mask files (ingest-masks)
//! <work>/labels/<band>/<pair>.txt  transferred labels (transfer)
//! <work>/review/...              decision log and edited labels (review)
//! <work>/augmented/<band>/       originals plus variants (augment)
//! <work>/dataset/                YOLO layout and manifest.json (assemble)
//! <work>/run_manifest.json
//! <work>/timing.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::dataset::{self, AssembleOptions, BandItems, BandSource, DatasetItem, TrainingConfig};
use crate::imgproc::{self, AugmentOp, FilterParams};
use crate::ingest::{self, ExternalDecoder, FrameDirectory, FramePair, PairingOutcome};
use crate::maskio::{self, LabelFile, LabelMode, MaskFile, MaskSet};
use crate::review::{self, ReviewStore};
use crate::timing::{self, StageTiming, TimingReport};
use crate::transfer::{self, CalibrationFile, TransferOptions};
use crate::{Band, Error, Result, TOOL_VERSION};

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const TIMING_FILE: &str = "timing.json";
pub const WORKERS_ENV: &str = "MATT_WORKERS";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Extract,
    Pair,
    IngestMasks,
    Transfer,
    Review,
    Augment,
    Assemble,
    Train,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Pair => "pair",
            Stage::IngestMasks => "ingest-masks",
            Stage::Transfer => "transfer",
            Stage::Review => "review",
            Stage::Augment => "augment",
            Stage::Assemble => "assemble",
            Stage::Train => "train",
        }
    }
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Pair, Stage::IngestMasks, Stage::Transfer, Stage::Augment, Stage::Assemble]
}
fn default_fstride() -> u64 {
    100
}
fn default_ontology() -> Vec<String> {
    vec!["car".into(), "truck".into()]
}
fn default_eps() -> f64 {
    maskio::DEFAULT_SIMPLIFY_EPS_PX
}
fn default_ratios() -> Vec<f64> {
    vec![0.8, 0.2]
}
fn default_decoder() -> String {
    "ffmpeg".into()
}
fn default_frame_ext() -> String {
    "png".into()
}
fn default_sec_per_image() -> f64 {
    timing::DEFAULT_SEC_PER_IMAGE
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputsConfig {
    /// Frame directory per band; defaults to `<work>/frames/<band>`.
    #[serde(default)]
    pub frames: BTreeMap<Band, PathBuf>,
    /// Source video (or directory of every frame) per band, for extract.
    #[serde(default)]
    pub videos: BTreeMap<Band, PathBuf>,
    /// Directory of mask interchange files.
    #[serde(default)]
    pub masks: Option<PathBuf>,
    /// Capture metadata overrides keyed by stem.
    #[serde(default)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractConfig {
    #[serde(default = "default_decoder")]
    pub decoder: String,
    #[serde(default = "default_frame_ext")]
    pub extension: String,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig { decoder: default_decoder(), extension: default_frame_ext() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    /// Calibration file per target band.
    #[serde(default)]
    pub calibrations: BTreeMap<Band, PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Filter tags; empty leaves the dataset unaugmented.
    #[serde(default)]
    pub ops: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurConfig {
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DogConfig {
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussThreshConfig {
    pub block: u32,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssembleConfig {
    #[serde(default = "default_ratios")]
    pub ratios: Vec<f64>,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        AssembleConfig { ratios: default_ratios() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: u32,
    #[serde(default = "TrainConfig::default_model")]
    pub model_tag: String,
    #[serde(default = "TrainConfig::default_image_size")]
    pub image_size: u32,
    /// Trainer command; the dataset manifest path is appended.
    #[serde(default)]
    pub command: Vec<String>,
}

impl TrainConfig {
    fn default_epochs() -> u32 {
        TrainingConfig::default().epochs
    }
    fn default_model() -> String {
        TrainingConfig::default().model_tag
    }
    fn default_image_size() -> u32 {
        TrainingConfig::default().image_size
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: Self::default_epochs(),
            model_tag: Self::default_model(),
            image_size: Self::default_image_size(),
            command: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    #[serde(default = "default_sec_per_image")]
    pub sec_per_image: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { sec_per_image: default_sec_per_image() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fstride")]
    pub fstride: u64,
    #[serde(default = "default_ontology")]
    pub ontology: Vec<String>,
    #[serde(default)]
    pub label_mode: LabelMode,
    #[serde(default = "default_eps")]
    pub simplify_eps_px: f64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub inputs: InputsConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub blur: Option<BlurConfig>,
    #[serde(default)]
    pub dog: Option<DogConfig>,
    #[serde(default)]
    pub gaussthresh: Option<GaussThreshConfig>,
    #[serde(default)]
    pub assemble: AssembleConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub timing: TimingConfig,
}

impl PipelineConfig {
    /// Config with every default and the given work directory.
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig::from_toml(&format!("work_dir = {:?}", work_dir.into().display().to_string()))
            .expect("default config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.work_dir);
        self.inputs.frames.values_mut().for_each(fix);
        self.inputs.videos.values_mut().for_each(fix);
        self.inputs.masks.iter_mut().for_each(fix);
        self.inputs.meta.iter_mut().for_each(fix);
        self.transfer.calibrations.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.fstride == 0 {
            return invalid("`fstride` must be >= 1".into());
        }
        if self.ontology.is_empty() {
            return invalid("`ontology` must not be empty".into());
        }
        if !(self.simplify_eps_px.is_finite() && self.simplify_eps_px >= 0.0) {
            return invalid("`simplify_eps_px` must be non-negative".into());
        }
        if self.workers == Some(0) {
            return invalid("`workers` must be >= 1".into());
        }
        if self.timing.sec_per_image <= 0.0 {
            return invalid("`timing.sec_per_image` must be positive".into());
        }
        dataset::split_counts(0, &self.assemble.ratios)
            .map_err(|e| ConfigError::Invalid(format!("`assemble.ratios`: {e}")))?;
        self.augment_ops()?;
        Ok(())
    }

    pub fn filter_params(&self) -> FilterParams {
        let mut p = FilterParams::default();
        if let Some(b) = &self.blur {
            p.blur_sigma = b.sigma;
        }
        if let Some(d) = &self.dog {
            p.dog_sigma1 = d.sigma1;
            p.dog_sigma2 = d.sigma2;
        }
        if let Some(g) = &self.gaussthresh {
            p.thresh_block = g.block;
            p.thresh_bias = g.bias;
        }
        p
    }

    pub fn augment_ops(&self) -> Result<Vec<AugmentOp>, ConfigError> {
        let ops = imgproc::parse_ops(&self.augment.ops.join(","), &self.filter_params())
            .map_err(|e| ConfigError::Invalid(format!("`augment.ops`: {e}")))?;
        for op in &ops {
            op.validate().map_err(|e| ConfigError::Invalid(format!("{}: {e}", op.tag())))?;
        }
        Ok(ops)
    }

    /// Hash of the config with the work directory blanked, so identical
    /// runs into different directories share provenance.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.work_dir = PathBuf::new();
        c.workers = None;
        dataset::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }

    fn frames_dir(&self, band: Band) -> PathBuf {
        self.inputs.frames.get(&band).cloned().unwrap_or_else(|| self.work_dir.join("frames").join(band.dir_name()))
    }
}

/// Bookkeeping for one stage: `outputs = (inputs - dropped) * fanout`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub inputs: usize,
    pub dropped: usize,
    pub fanout: usize,
    pub outputs: usize,
    /// Stage-specific counters.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, i64>,
}

impl StageRecord {
    fn new(stage: Stage, inputs: usize, dropped: usize, fanout: usize, outputs: usize) -> Self {
        StageRecord { stage, inputs, dropped, fanout, outputs, details: BTreeMap::new() }
    }

    fn detail(mut self, key: &str, value: impl TryInto<i64>) -> Self {
        self.details.insert(key.to_string(), value.try_into().unwrap_or(i64::MAX));
        self
    }

    pub fn balanced(&self) -> bool {
        (self.inputs - self.dropped.min(self.inputs)) * self.fanout == self.outputs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    /// Stage that stopped the run, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub timing: TimingReport,
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    warnings: Vec<String>,
    dataset_images: Option<usize>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

type CurrentLabels = (Vec<FramePair>, BTreeMap<(Band, String), LabelFile>, BTreeSet<String>);

/// Worker count from `MATT_WORKERS`, falling back to the config value.
pub fn worker_count(config: &PipelineConfig) -> Result<Option<usize>, ConfigError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::Invalid(format!("{WORKERS_ENV}=`{v}` is not a positive integer"))),
        },
        Err(_) => Ok(config.workers),
    }
}

/// Sizes the global worker pool used outside [`run_pipeline`]. Only the
/// first call in a process takes effect.
pub fn init_global_workers(n: usize) -> Result<(), ConfigError> {
    if n == 0 {
        return Err(ConfigError::Invalid("worker count must be >= 1".into()));
    }
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("global worker pool already initialized");
    }
    Ok(())
}

/// Runs the configured stages in order inside a worker pool, writing
/// `run_manifest.json` and `timing.json` into the work directory even when
/// a stage fails.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count(config)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ConfigError::Invalid(format!("worker pool: {e}")))?;
    pool.install(|| run_stages(config))
}

fn run_stages(config: &PipelineConfig) -> Result<RunOutcome> {
    fs::create_dir_all(&config.work_dir).map_err(|e| Error::io(&config.work_dir, e))?;
    let mut runner = Runner { config, warnings: Vec::new(), dataset_images: None };
    let mut records = Vec::new();
    let mut timings: Vec<StageTiming> = Vec::new();
    let mut failure = None;
    for &stage in &config.stages {
        log::info!("stage {}", stage.name());
        let (t, result) = timing::time_stage(stage.name(), |items| {
            let rec = runner.run(stage)?;
            *items = rec.outputs as u64;
            Ok::<_, Error>(rec)
        });
        timings.push(t);
        match result {
            Ok(rec) => {
                if !rec.balanced() {
                    runner.warnings.push(format!("{}: counters do not balance", stage.name()));
                }
                records.push(rec);
            }
            Err(e) => {
                failure = Some((stage, e));
                break;
            }
        }
    }

    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        seed: config.seed,
        stages: records,
        warnings: runner.warnings,
        failed_stage: failure.as_ref().map(|(s, _)| *s),
    };
    let n_images = runner.dataset_images.unwrap_or_else(|| {
        manifest.stages.iter().rev().find(|r| r.stage == Stage::Transfer).map_or(0, |r| r.outputs)
    });
    let timing = TimingReport::build(timings, n_images as u64, config.timing.sec_per_image)?;
    write_json(&config.work_dir.join(RUN_MANIFEST), &manifest)?;
    write_json(&config.work_dir.join(TIMING_FILE), &timing)?;
    if let Some((stage, source)) = failure {
        return Err(Error::Stage { stage: stage.name().to_string(), source: Box::new(source) });
    }
    Ok(RunOutcome { manifest, timing })
}

impl Runner<'_> {
    fn work(&self, rel: &str) -> PathBuf {
        self.config.work_dir.join(rel)
    }

    fn run(&mut self, stage: Stage) -> Result<StageRecord> {
        match stage {
            Stage::Extract => self.extract(),
            Stage::Pair => self.pair(),
            Stage::IngestMasks => self.ingest_masks(),
            Stage::Transfer => self.transfer(),
            Stage::Review => self.review(),
            Stage::Augment => self.augment(),
            Stage::Assemble => self.assemble(),
            Stage::Train => self.train(),
        }
    }

    fn extract(&mut self) -> Result<StageRecord> {
        let c = self.config;
        if c.inputs.videos.is_empty() {
            return Err(ConfigError::Invalid("extract needs `inputs.videos`".into()).into());
        }
        let mut written = 0;
        for (band, video) in &c.inputs.videos {
            let out = c.frames_dir(*band);
            reset_dir(&out)?;
            let source: Box<dyn ingest::FrameSource> = if video.is_dir() {
                Box::new(FrameDirectory { dir: video.clone() })
            } else {
                Box::new(ExternalDecoder { program: c.extract.decoder.clone(), video: video.clone() })
            };
            written += ingest::extract_frames(source.as_ref(), c.fstride, &out, &c.extract.extension)?;
        }
        let n = c.inputs.videos.len();
        Ok(StageRecord::new(Stage::Extract, n, 0, written / n.max(1), written).detail("fstride", c.fstride))
    }

    fn pair(&mut self) -> Result<StageRecord> {
        let c = self.config;
        let dirs: BTreeMap<Band, PathBuf> =
            Band::ALL.iter().map(|b| (*b, c.frames_dir(*b))).filter(|(b, d)| *b == Band::Rgb || d.is_dir()).collect();
        let overrides = match &c.inputs.meta {
            Some(p) => ingest::load_meta_overrides(p)?,
            None => Default::default(),
        };
        let outcome = ingest::pair_frames(&dirs, &overrides)?;
        for u in &outcome.unpaired {
            self.warnings.push(format!("unpaired frame `{}` (missing {:?})", u.stem, u.missing));
        }
        let no_meta = outcome.pairs.iter().filter(|p| p.meta.is_none()).count();
        if no_meta > 0 {
            self.warnings.push(format!("{no_meta} pairs have no capture metadata"));
        }
        write_json(&self.work(review::PAIRS_FILE), &outcome)?;
        let inputs = outcome.pairs.len() + outcome.unpaired.len();
        Ok(StageRecord::new(Stage::Pair, inputs, outcome.unpaired.len(), 1, outcome.pairs.len())
            .detail("bands", dirs.len()))
    }

    fn load_pairs(&self) -> Result<Vec<FramePair>> {
        Ok(read_json::<PairingOutcome>(&self.work(review::PAIRS_FILE))?.pairs)
    }

    fn ingest_masks(&mut self) -> Result<StageRecord> {
        let src = self
            .config
            .inputs
            .masks
            .clone()
            .ok_or_else(|| ConfigError::Invalid("ingest-masks needs `inputs.masks`".into()))?;
        let out = self.work(review::MASKS_DIR);
        reset_dir(&out)?;
        let mut files: Vec<PathBuf> = fs::read_dir(&src)
            .map_err(|e| Error::io(&src, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        let mut masks = 0;
        for path in &files {
            let set = MaskFile::read(path)?;
            if set.ontology != self.config.ontology {
                self.warnings.push(format!(
                    "{}: ontology {:?} differs from configured {:?}",
                    path.display(),
                    set.ontology,
                    self.config.ontology
                ));
            }
            masks += set.masks.len();
            MaskFile::write(&set, &out.join(format!("{}.json", set.pair_id)))?;
        }
        Ok(StageRecord::new(Stage::IngestMasks, files.len(), 0, 1, files.len()).detail("masks", masks))
    }

    fn load_masks(&self) -> Result<Vec<MaskSet>> {
        let dir = self.work(review::MASKS_DIR);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        files.iter().map(|p| MaskFile::read(p)).collect()
    }

    fn transfer(&mut self) -> Result<StageRecord> {
        let c = self.config;
        let pairs = self.load_pairs()?;
        let masks = self.load_masks()?;
        let mut opts = TransferOptions::new(c.label_mode);
        opts.simplify_eps_px = c.simplify_eps_px;
        for (band, path) in &c.transfer.calibrations {
            let (declared, cal) = CalibrationFile::load(path)?;
            if declared.is_some_and(|d| d != *band) {
                self.warnings.push(format!("{}: calibration declares another target band", path.display()));
            }
            opts.calibrations.insert(*band, cal);
        }
        let batch = transfer::transfer_batch(&pairs, &masks, &opts)?;
        let out = self.work(review::LABELS_DIR);
        reset_dir(&out)?;
        let mut files = 0;
        for (band, labels) in &batch.labels {
            for file in labels {
                let path = out.join(band.dir_name()).join(format!("{}.txt", file.pair_id));
                maskio::write_label_file(&path, file, c.label_mode)?;
                files += 1;
            }
        }
        let r = &batch.report;
        if r.total_dropped() > 0 {
            self.warnings.push(format!(
                "transfer dropped {} unusable masks and {} clipped labels",
                r.conversion_dropped,
                r.clipped_dropped.values().sum::<usize>()
            ));
        }
        let fanout = if pairs.is_empty() { 0 } else { files / pairs.len() };
        let mut rec = StageRecord::new(Stage::Transfer, pairs.len(), 0, fanout, files)
            .detail("masksets", r.masksets)
            .detail("records", r.records)
            .detail("conversion_dropped", r.conversion_dropped);
        for (band, n) in &r.clipped_dropped {
            rec = rec.detail(&format!("clipped_dropped_{}", band.dir_name()), *n);
        }
        Ok(rec)
    }

    fn decision_log_exists(&self) -> bool {
        self.work(review::DECISION_LOG).exists()
    }

    fn review(&mut self) -> Result<StageRecord> {
        let store = ReviewStore::open(&self.config.work_dir, self.config.label_mode)?;
        let stats = store.review_stats();
        if stats.pending > 0 {
            self.warnings.push(format!("{} pairs have not been reviewed", stats.pending));
        }
        let rejected = store.rejected().len();
        Ok(StageRecord::new(Stage::Review, store.len(), rejected, 1, store.len() - rejected)
            .detail("decided", stats.decided)
            .detail("decisions_logged", stats.decisions_logged))
    }

    /// Current labels and rejected pairs, reflecting the decision log when
    /// one exists.
    fn current_labels(&self) -> Result<CurrentLabels> {
        let pairs = self.load_pairs()?;
        let mut labels = BTreeMap::new();
        let mut rejected = BTreeSet::new();
        if self.decision_log_exists() {
            let store = ReviewStore::open(&self.config.work_dir, self.config.label_mode)?;
            for (band, files) in store.labels() {
                for f in files {
                    labels.insert((band, f.pair_id.clone()), f);
                }
            }
            rejected = store.rejected();
        } else {
            for pair in &pairs {
                for &band in pair.images.keys() {
                    let path = self.work(review::LABELS_DIR).join(band.dir_name()).join(format!("{}.txt", pair.pair_id));
                    let file = if path.exists() {
                        maskio::read_label_file(&path, self.config.label_mode)?
                    } else {
                        LabelFile { pair_id: pair.pair_id.clone(), records: Vec::new() }
                    };
                    labels.insert((band, pair.pair_id.clone()), file);
                }
            }
        }
        Ok((pairs, labels, rejected))
    }

    fn augment(&mut self) -> Result<StageRecord> {
        let ops = self.config.augment_ops()?;
        let (pairs, labels, rejected) = self.current_labels()?;
        let out_root = self.work("augmented");
        reset_dir(&out_root)?;
        let mut inputs = 0;
        let mut dropped = 0;
        let mut written = 0;
        for band in Band::ALL {
            let with_band: Vec<&FramePair> = pairs.iter().filter(|p| p.images.contains_key(&band)).collect();
            let entries: Vec<(PathBuf, LabelFile)> = with_band
                .iter()
                .filter(|p| !rejected.contains(&p.pair_id))
                .filter_map(|p| Some((p.images.get(&band)?.clone(), labels.get(&(band, p.pair_id.clone()))?.clone())))
                .collect();
            if entries.is_empty() {
                continue;
            }
            let s = dataset::augment_files(&entries, &ops, &out_root.join(band.dir_name()), self.config.label_mode)?;
            inputs += with_band.len();
            dropped += with_band.len() - s.originals;
            written += s.written;
        }
        Ok(StageRecord::new(Stage::Augment, inputs, dropped, ops.len() + 1, written).detail("ops", ops.len()))
    }

    fn assemble(&mut self) -> Result<StageRecord> {
        let c = self.config;
        let (pairs, _, rejected) = self.current_labels()?;
        let aug_root = self.work("augmented");
        let bands: Vec<BandItems> = if c.stages.contains(&Stage::Augment) && aug_root.is_dir() {
            let mut v = Vec::new();
            for band in Band::ALL {
                let dir = aug_root.join(band.dir_name());
                if dir.is_dir() {
                    v.push(dataset::scan_band(&BandSource { band, images: dir.join("images"), labels: dir.join("labels") })?);
                }
            }
            v
        } else {
            // Unaugmented: originals with their current labels; reviewed
            // labels are exported first so edits are picked up.
            let staged = self.work("review/current");
            if self.decision_log_exists() {
                reset_dir(&staged)?;
                ReviewStore::open(&c.work_dir, c.label_mode)?.export_labels(&staged)?;
            }
            let label_root = if self.decision_log_exists() { staged } else { self.work(review::LABELS_DIR) };
            Band::ALL
                .iter()
                .map(|&band| BandItems {
                    band,
                    items: pairs
                        .iter()
                        .filter_map(|p| {
                            Some(DatasetItem {
                                stem: p.pair_id.clone(),
                                image: p.images.get(&band)?.clone(),
                                label: label_root.join(band.dir_name()).join(format!("{}.txt", p.pair_id)),
                            })
                        })
                        .collect(),
                })
                .filter(|b| !b.items.is_empty())
                .collect()
        };
        let inputs: usize = bands.iter().map(|b| b.items.len()).sum();
        let opts = AssembleOptions {
            ratios: c.assemble.ratios.clone(),
            seed: c.seed,
            ontology: c.ontology.clone(),
            training: TrainingConfig {
                epochs: c.train.epochs,
                model_tag: c.train.model_tag.clone(),
                image_size: c.train.image_size,
            },
            exclude: rejected,
            config_hash: Some(c.hash()),
        };
        let out = self.work("dataset");
        reset_dir(&out)?;
        let manifest = dataset::assemble_items(&bands, &out, &opts)?;
        let outputs: usize = Band::ALL.iter().map(|b| manifest.image_count(*b)).sum();
        self.dataset_images = Some(outputs);
        let mut rec = StageRecord::new(Stage::Assemble, inputs, inputs - outputs, 1, outputs)
            .detail("excluded_pairs", manifest.excluded.len());
        for (band, splits) in &manifest.splits {
            for (split, files) in splits {
                rec = rec.detail(&format!("{}_{split}", band.dir_name()), files.len());
            }
        }
        Ok(rec)
    }

    fn train(&mut self) -> Result<StageRecord> {
        let manifest = self.work("dataset/manifest.json");
        let Some((program, args)) = self.config.train.command.split_first() else {
            return Err(ConfigError::Invalid("train needs `train.command`".into()).into());
        };
        let status = Command::new(program)
            .args(args)
            .arg(&manifest)
            .status()
            .map_err(|e| Error::io(Path::new(program), e))?;
        let code = status.code().unwrap_or(-1);
        if code != 0 {
            self.warnings.push(format!("trainer exited with code {code}"));
        }
        Ok(StageRecord::new(Stage::Train, 1, 0, 1, 1).detail("exit_code", code))
    }
}
