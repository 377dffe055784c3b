use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use matt_core::dataset::{self, AssembleOptions, BandSource, TrainingConfig};
use matt_core::evaluate::{self, EvalConfig};
use matt_core::imgproc::{self, FilterParams};
use matt_core::ingest::{self, ExternalDecoder, FrameDirectory, FrameSource};
use matt_core::maskio::{self, MaskFile};
use matt_core::pipeline::{self, PipelineConfig};
use matt_core::review::{self, ReviewStore};
use matt_core::timing::{self, TimingReport};
use matt_core::transfer::{self, CalibrationFile, TransferOptions};
use matt_core::{Band, LabelMode};

use crate::server::{self, ServerOptions};

#[derive(Debug, Parser)]
#[command(name = "matt", version, about = "Transfer RGB segmentation labels onto multispectral imagery")]
pub struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "MATT_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample every N-th frame of a video (or directory of frames).
    Extract(ExtractArgs),
    /// Pair frames across band directories by filename stem.
    Pair(PairArgs),
    /// Validate mask interchange files and copy them into a work directory.
    IngestMasks(IngestArgs),
    /// Convert masks to labels and transfer them to every band.
    Transfer(TransferArgs),
    /// Grow a labelled image set with filter variants.
    Augment(AugmentArgs),
    /// Split images into a YOLO dataset with a manifest.
    Assemble(AssembleArgs),
    /// Serve the review API for a work directory.
    Review(ReviewArgs),
    /// Score detections against ground truth, stratified by capture conditions.
    Eval(EvalArgs),
    /// Render a labelling-time report from stage timings.
    Report(ReportArgs),
    /// Run the stages listed in a config file.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Bbox,
    Polygon,
}

impl From<Mode> for LabelMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Bbox => LabelMode::BBox,
            Mode::Polygon => LabelMode::Polygon,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Video file, or a directory holding every frame.
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub fstride: u64,
    #[arg(long, default_value = "ffmpeg")]
    pub decoder: String,
    #[arg(long, default_value = "png")]
    pub ext: String,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub lwir: Option<PathBuf>,
    #[arg(long)]
    pub fused: Option<PathBuf>,
    /// JSON object of stem -> capture metadata overrides.
    #[arg(long)]
    pub meta: Option<PathBuf>,
    /// Work directory; `pairs.json` is written here.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory of interchange JSON files.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Work directory; files land in `<out>/masks`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Work directory holding `pairs.json` and `masks/`; labels are written
    /// to `<work>/labels/<band>/`.
    #[arg(long)]
    pub work: PathBuf,
    #[arg(long, value_enum, default_value = "bbox")]
    pub mode: Mode,
    /// Calibration file as `<band>=<path>`; repeatable.
    #[arg(long = "calibration")]
    pub calibrations: Vec<String>,
    /// Polygon simplification tolerance in pixels.
    #[arg(long, default_value_t = maskio::DEFAULT_SIMPLIFY_EPS_PX)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated filter tags, e.g. `blur,fliph,flipblur`.
    #[arg(long, default_value = "")]
    pub ops: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline config whose `[blur]`, `[dog]` and `[gaussthresh]` sections
    /// set filter parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bbox")]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct AssembleArgs {
    /// Directory with `<band>/images` and `<band>/labels` per band.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.2")]
    pub ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "car,truck")]
    pub ontology: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub epochs: u32,
    #[arg(long, default_value = "yolov8s")]
    pub model: String,
    #[arg(long, default_value_t = 640)]
    pub image_size: u32,
    /// Work directory whose review log lists rejected pairs to leave out.
    #[arg(long)]
    pub review: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bbox")]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    /// Work directory produced by `pair` and `transfer`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Static UI bundle to serve.
    #[arg(long)]
    pub ui: Option<PathBuf>,
    /// Accept new decisions for already-decided pairs.
    #[arg(long)]
    pub allow_rereview: bool,
    #[arg(long, value_enum, default_value = "bbox")]
    pub mode: Mode,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `<preds>/<manual|matt>/<band>/<stem>.txt`, lines `cls cx cy w h conf`.
    #[arg(long)]
    pub preds: PathBuf,
    /// `<gt>/<band>/<stem>.txt` YOLO labels.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub meta: Option<PathBuf>,
    #[arg(long, default_value_t = evaluate::DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    /// Number of ontology classes.
    #[arg(long, default_value_t = 2)]
    pub classes: u32,
    /// Also report mAP averaged over IoU 0.50:0.95.
    #[arg(long)]
    pub sweep: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Stage timing JSON (single timing, list, or run timing report); repeatable.
    #[arg(long = "timings", required = true)]
    pub timings: Vec<PathBuf>,
    /// Images the manual estimate covers; defaults to the largest stage item count.
    #[arg(long)]
    pub n_images: Option<u64>,
    #[arg(long, default_value_t = timing::DEFAULT_SEC_PER_IMAGE)]
    pub sec_per_image: f64,
    /// Work directory whose review log adds a projected verification stage.
    #[arg(long)]
    pub review: Option<PathBuf>,
    /// Add the working-day projection line.
    #[arg(long)]
    pub working_days: bool,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!(matt_core::Error::from(pipeline::ConfigError::Invalid("--workers must be >= 1".into())));
        }
        pipeline::init_global_workers(n)?;
    }
    match cli.command {
        Command::Extract(a) => extract(a),
        Command::Pair(a) => pair(a),
        Command::IngestMasks(a) => ingest_masks(a),
        Command::Transfer(a) => transfer_cmd(a),
        Command::Augment(a) => augment(a),
        Command::Assemble(a) => assemble(a),
        Command::Review(a) => review_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run_config(a, cli.workers),
    }
}

fn extract(a: ExtractArgs) -> anyhow::Result<()> {
    let source: Box<dyn FrameSource> = if a.video.is_dir() {
        Box::new(FrameDirectory { dir: a.video.clone() })
    } else {
        Box::new(ExternalDecoder { program: a.decoder, video: a.video.clone() })
    };
    let n = ingest::extract_frames(source.as_ref(), a.fstride, &a.out, &a.ext)?;
    eprintln!("extracted {n} frames into {}", a.out.display());
    Ok(())
}

fn pair(a: PairArgs) -> anyhow::Result<()> {
    let mut dirs = BTreeMap::from([(Band::Rgb, a.rgb)]);
    if let Some(d) = a.lwir {
        dirs.insert(Band::Lwir, d);
    }
    if let Some(d) = a.fused {
        dirs.insert(Band::RgbLwir, d);
    }
    let overrides = match &a.meta {
        Some(p) => ingest::load_meta_overrides(p)?,
        None => Default::default(),
    };
    let outcome = ingest::pair_frames(&dirs, &overrides)?;
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    emit(&json(&outcome), Some(&a.out.join(review::PAIRS_FILE)))?;
    for u in &outcome.unpaired {
        eprintln!("warning: `{}` missing {:?}", u.stem, u.missing);
    }
    eprintln!("{} pairs, {} unpaired", outcome.pairs.len(), outcome.unpaired.len());
    Ok(())
}

fn ingest_masks(a: IngestArgs) -> anyhow::Result<()> {
    let out = a.out.join(review::MASKS_DIR);
    fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
        .with_context(|| a.input.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut masks = 0;
    for path in &files {
        let set = MaskFile::read(path)?;
        masks += set.masks.len();
        MaskFile::write(&set, &out.join(format!("{}.json", set.pair_id)))?;
    }
    eprintln!("ingested {} files, {masks} masks", files.len());
    Ok(())
}

fn parse_band_path(spec: &str) -> anyhow::Result<(Band, PathBuf)> {
    let Some((band, path)) = spec.split_once('=') else {
        bail!(matt_core::Error::from(pipeline::ConfigError::Invalid(format!("expected <band>=<path>, got `{spec}`"))));
    };
    let band: Band = band.parse().map_err(|_| {
        matt_core::Error::from(pipeline::ConfigError::Invalid(format!("unknown band `{band}`")))
    })?;
    Ok((band, PathBuf::from(path)))
}

fn transfer_cmd(a: TransferArgs) -> anyhow::Result<()> {
    let pairs_path = a.work.join(review::PAIRS_FILE);
    let text = fs::read_to_string(&pairs_path).with_context(|| pairs_path.display().to_string())?;
    let outcome: ingest::PairingOutcome =
        serde_json::from_str(&text).map_err(|e| matt_core::Error::from(pipeline::ConfigError::Parse(e.to_string())))?;
    let mask_dir = a.work.join(review::MASKS_DIR);
    let mut masks = Vec::new();
    if mask_dir.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&mask_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        files.sort();
        for f in files {
            masks.push(MaskFile::read(&f)?);
        }
    }
    let mode: LabelMode = a.mode.into();
    let mut opts = TransferOptions::new(mode);
    opts.simplify_eps_px = a.eps;
    for spec in &a.calibrations {
        let (band, path) = parse_band_path(spec)?;
        opts.calibrations.insert(band, CalibrationFile::load(&path)?.1);
    }
    let batch = transfer::transfer_batch(&outcome.pairs, &masks, &opts)?;
    for (band, files) in &batch.labels {
        for f in files {
            let path = a.work.join(review::LABELS_DIR).join(band.dir_name()).join(format!("{}.txt", f.pair_id));
            maskio::write_label_file(&path, f, mode)?;
        }
    }
    let r = &batch.report;
    eprintln!(
        "{} pairs, {} mask sets, {} records; dropped {} unusable masks, {} clipped labels",
        r.pairs,
        r.masksets,
        r.records,
        r.conversion_dropped,
        r.clipped_dropped.values().sum::<usize>()
    );
    Ok(())
}

fn filter_params(config: Option<&Path>) -> anyhow::Result<FilterParams> {
    Ok(match config {
        Some(p) => PipelineConfig::load(p)?.filter_params(),
        None => FilterParams::default(),
    })
}

fn augment(a: AugmentArgs) -> anyhow::Result<()> {
    let params = filter_params(a.config.as_deref())?;
    let ops = imgproc::parse_ops(&a.ops, &params).map_err(matt_core::Error::from)?;
    let s = dataset::augment_directory(&a.input, &a.labels, &ops, &a.out, a.mode.into())?;
    eprintln!("{} originals -> {} images", s.originals, s.written);
    Ok(())
}

fn assemble(a: AssembleArgs) -> anyhow::Result<()> {
    let sources: Vec<BandSource> = Band::ALL
        .iter()
        .map(|&band| {
            let root = a.input.join(band.dir_name());
            BandSource { band, images: root.join("images"), labels: root.join("labels") }
        })
        .filter(|s| s.images.is_dir())
        .collect();
    let exclude: BTreeSet<String> = match &a.review {
        Some(work) => ReviewStore::open(work, a.mode.into())?.rejected(),
        None => BTreeSet::new(),
    };
    let opts = AssembleOptions {
        ratios: a.ratios,
        seed: a.seed,
        ontology: a.ontology,
        training: TrainingConfig { epochs: a.epochs, model_tag: a.model, image_size: a.image_size },
        exclude,
        config_hash: None,
    };
    let manifest = dataset::assemble(&sources, &a.out, &opts)?;
    for band in manifest.splits.keys() {
        eprintln!("{band}: {} images", manifest.image_count(*band));
    }
    Ok(())
}

fn review_cmd(a: ReviewArgs) -> anyhow::Result<()> {
    let store = ReviewStore::open(&a.dataset, a.mode.into())?;
    let app = server::router(store, ServerOptions { ui_dir: a.ui, allow_rereview: a.allow_rereview });
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        eprintln!("review server on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let overrides = match &a.meta {
        Some(p) => ingest::load_meta_overrides(p)?,
        None => Default::default(),
    };
    let images = evaluate::load_eval_images(&a.preds, &a.gt, &overrides)?;
    let config = EvalConfig { iou_thresh: a.iou, categories: a.classes, sweep: a.sweep };
    let report = evaluate::stratified_report(&images, &config).map_err(matt_core::Error::from)?;
    let text = match a.format {
        Format::Text => evaluate::render_text(&report),
        Format::Json => json(&serde_json::json!({
            "report": report,
            "day_night": evaluate::aggregate_daynight(&report),
        })),
        Format::Csv => evaluate::render_csv(&report),
    };
    emit(&text, a.out.as_deref())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let mut stages = Vec::new();
    for p in &a.timings {
        stages.extend(timing::load_stage_timings(p)?);
    }
    if let Some(work) = &a.review {
        let stats = ReviewStore::open(work, LabelMode::BBox)?.review_stats();
        if let Some(mean) = stats.mean_elapsed_seconds {
            stages.push(timing::StageTiming {
                stage: "manual check".into(),
                wall_seconds: mean * stats.total as f64,
                items: stats.total as u64,
            });
        }
    }
    let n_images = a.n_images.unwrap_or_else(|| stages.iter().map(|s| s.items).max().unwrap_or(0));
    let report = TimingReport::build(stages, n_images, a.sec_per_image).map_err(matt_core::Error::from)?;
    let text = match a.format {
        Format::Json => json(&report),
        _ => report.render_text(a.working_days),
    };
    emit(&text, None)
}

fn run_config(a: RunArgs, workers: Option<usize>) -> anyhow::Result<()> {
    let mut config = PipelineConfig::load(&a.config)?;
    if workers.is_some() {
        config.workers = workers;
    }
    let outcome = pipeline::run_pipeline(&config)?;
    for rec in &outcome.manifest.stages {
        eprintln!("{:<13} in {:>6}  dropped {:>5}  out {:>6}", rec.stage.name(), rec.inputs, rec.dropped, rec.outputs);
    }
    for w in &outcome.manifest.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", outcome.timing.render_text(false));
    Ok(())
}

/// Exit status for an error: 1 for bad input, 2 for a failed stage.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<matt_core::Error>() {
        Some(e) if e.is_validation() => 1,
        Some(_) => 2,
        None => 2,
    }
}
