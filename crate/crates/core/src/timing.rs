//! Stage timing, the manual-labelling time model and the reduction report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Average time to hand-label one image.
pub const DEFAULT_SEC_PER_IMAGE: f64 = 30.0;
/// Productive labelling hours in a working day.
pub const WORKING_HOURS_PER_DAY: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimingError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub wall_seconds: f64,
    #[serde(default)]
    pub items: u64,
}

impl StageTiming {
    pub fn validate(&self) -> Result<(), TimingError> {
        if !(self.wall_seconds.is_finite() && self.wall_seconds >= 0.0) {
            return Err(TimingError::InvalidParameter(format!(
                "stage `{}`: wall_seconds {} must be non-negative",
                self.stage, self.wall_seconds
            )));
        }
        Ok(())
    }
}

/// Hours to label `n_images` by hand.
pub fn estimate_manual(n_images: u64, sec_per_image: f64) -> Result<f64, TimingError> {
    if !(sec_per_image.is_finite() && sec_per_image > 0.0) {
        return Err(TimingError::InvalidParameter(format!("sec_per_image {sec_per_image} must be positive")));
    }
    Ok(n_images as f64 * sec_per_image / 3600.0)
}

/// Percentage of manual time saved: `100 (manual - matt) / manual`.
pub fn report_reduction(manual_hours: f64, matt_hours: f64) -> Result<f64, TimingError> {
    if !(manual_hours.is_finite() && manual_hours > 0.0) {
        return Err(TimingError::InvalidParameter(format!("manual_hours {manual_hours} must be positive")));
    }
    Ok(100.0 * (manual_hours - matt_hours) / manual_hours)
}

fn round_ms(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

/// Runs `work` on the calling thread and records its wall time, rounded to
/// milliseconds. `work` bumps the item counter it is handed; the timing is
/// returned even when the work fails.
pub fn time_stage<T, E>(stage: &str, work: impl FnOnce(&mut u64) -> Result<T, E>) -> (StageTiming, Result<T, E>) {
    let mut items = 0;
    let start = Instant::now();
    let result = work(&mut items);
    let wall_seconds = round_ms(start.elapsed().as_secs_f64());
    (StageTiming { stage: stage.to_string(), wall_seconds, items }, result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub stages: Vec<StageTiming>,
    pub n_images: u64,
    pub sec_per_image: f64,
    pub manual_estimate_hours: f64,
    pub matt_total_hours: f64,
    pub reduction_pct: f64,
}

impl TimingReport {
    /// Compares the recorded stages against hand-labelling `n_images`.
    pub fn build(stages: Vec<StageTiming>, n_images: u64, sec_per_image: f64) -> Result<Self, TimingError> {
        for s in &stages {
            s.validate()?;
        }
        let manual_estimate_hours = estimate_manual(n_images, sec_per_image)?;
        let matt_total_hours = stages.iter().map(|s| s.wall_seconds).sum::<f64>() / 3600.0;
        let reduction_pct = if manual_estimate_hours > 0.0 {
            report_reduction(manual_estimate_hours, matt_total_hours)?
        } else {
            0.0
        };
        Ok(TimingReport { stages, n_images, sec_per_image, manual_estimate_hours, matt_total_hours, reduction_pct })
    }

    pub fn total_seconds(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_seconds).sum()
    }

    /// Text table: one row per stage plus manual and MATT totals, and the
    /// working-day projection when `working_days` is set.
    pub fn render_text(&self, working_days: bool) -> String {
        let mut out = String::new();
        writeln!(out, "{:<28} {:>10} {:>10}", "Process", "Items", "Hours").unwrap();
        writeln!(
            out,
            "{:<28} {:>10} {:>10.1}",
            format!("Manual ({} s/image)", self.sec_per_image),
            self.n_images,
            self.manual_estimate_hours
        )
        .unwrap();
        for s in &self.stages {
            writeln!(out, "{:<28} {:>10} {:>10.1}", format!("MATT {}", s.stage), s.items, s.wall_seconds / 3600.0)
                .unwrap();
        }
        writeln!(out, "{:<28} {:>10} {:>10.1}", "MATT total", "", self.matt_total_hours).unwrap();
        writeln!(out, "time reduction: {:.1}%", self.reduction_pct).unwrap();
        if working_days {
            writeln!(
                out,
                "working days at {WORKING_HOURS_PER_DAY} h/day: manual {:.1}, MATT {:.1}",
                self.manual_estimate_hours / WORKING_HOURS_PER_DAY,
                self.matt_total_hours / WORKING_HOURS_PER_DAY
            )
            .unwrap();
        }
        out
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TimingDoc {
    One(StageTiming),
    Many(Vec<StageTiming>),
    Report { stages: Vec<StageTiming> },
}

/// Reads stage timings from a JSON file holding one timing object, a list
/// of them, or a report with a `stages` list.
pub fn load_stage_timings(path: &Path) -> Result<Vec<StageTiming>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stages = match serde_json::from_str::<TimingDoc>(&text).map_err(|e| Error::json(path, e))? {
        TimingDoc::One(s) => vec![s],
        TimingDoc::Many(v) | TimingDoc::Report { stages: v } => v,
    };
    for s in &stages {
        s.validate()?;
    }
    Ok(stages)
}
