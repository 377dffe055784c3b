//! Human verification of transferred labels.
//!
//! Decisions are appended to `review/decisions.jsonl` inside a work
//! directory; edited label files are materialized under
//! `review/labels/<band>/`. Opening a store replays the log over the
//! transferred labels in `labels/<band>/`, so the log alone determines the
//! reviewed state.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ingest::{FramePair, PairingOutcome};
use crate::maskio::{self, LabelFile, LabelMode, MaskFile};
use crate::{Band, Error, Result};

/// Upper clamp on reported review time, to keep idle gaps out of the
/// throughput figures.
/// UTC instant stamped on decisions.
pub type Timestamp = DateTime<Utc>;

pub const MAX_ELAPSED_SECONDS: f64 = 600.0;

pub const PAIRS_FILE: &str = "pairs.json";
pub const LABELS_DIR: &str = "labels";
pub const MASKS_DIR: &str = "masks";
pub const DECISION_LOG: &str = "review/decisions.jsonl";
pub const REVIEWED_LABELS_DIR: &str = "review/labels";

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown pair `{0}`")]
    NotFound(String),
    #[error("pair `{0}` already has a decision; re-review is not enabled")]
    Conflict(String),
    #[error("invalid decision: {0}")]
    Validation(String),
    #[error("decision log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
}

impl ReviewError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, ReviewError::CorruptLog { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Accept,
    Edit,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub pair_id: String,
    pub band: Band,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited_labels: Option<LabelFile>,
    pub reviewer: String,
    pub elapsed_seconds: f64,
    pub timestamp: DateTime<Utc>,
    /// Client-chosen retry token; re-posting a decision with the same token
    /// is a no-op.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl ReviewDecision {
    fn validate(&self) -> Result<(), ReviewError> {
        if !(self.elapsed_seconds.is_finite() && self.elapsed_seconds >= 0.0) {
            return Err(ReviewError::Validation(format!("elapsed_seconds {} must be non-negative", self.elapsed_seconds)));
        }
        match (&self.action, &self.edited_labels) {
            (Action::Edit, None) => Err(ReviewError::Validation("edit requires edited_labels".into())),
            (Action::Edit, Some(labels)) => {
                labels.validate().map_err(|e| ReviewError::Validation(e.to_string()))?;
                if labels.pair_id != self.pair_id {
                    return Err(ReviewError::Validation(format!(
                        "edited labels belong to `{}`, not `{}`",
                        labels.pair_id, self.pair_id
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Decision as submitted by a client; the server supplies pair id and
/// timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub band: Band,
    pub action: Action,
    #[serde(default)]
    pub edited_labels: Option<LabelFile>,
    #[serde(default)]
    pub reviewer: String,
    pub elapsed_seconds: f64,
    #[serde(default)]
    pub token: Option<String>,
}

impl DecisionRequest {
    pub fn into_decision(self, pair_id: &str, timestamp: DateTime<Utc>) -> ReviewDecision {
        ReviewDecision {
            pair_id: pair_id.to_string(),
            band: self.band,
            action: self.action,
            edited_labels: self.edited_labels,
            reviewer: self.reviewer,
            elapsed_seconds: self.elapsed_seconds,
            timestamp,
            token: self.token,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pending,
    Decided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueueEntry {
    pub pair_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<ReviewDecision>,
}

/// Everything the review UI needs to render one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: String,
    pub status: Status,
    pub bands: Vec<Band>,
    pub labels: BTreeMap<Band, LabelFile>,
    pub masks: Option<MaskFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<ReviewDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub total: usize,
    pub decided: usize,
    pub pending: usize,
    pub decisions_logged: usize,
    /// Mean review time per logged decision; absent before the first one.
    pub mean_elapsed_seconds: Option<f64>,
    /// Hours to review the pending pairs at the mean rate.
    pub projected_hours: Option<f64>,
}

#[derive(Debug, Clone)]
struct PairState {
    pair: FramePair,
    labels: BTreeMap<Band, LabelFile>,
    decision: Option<ReviewDecision>,
    tokens: BTreeSet<String>,
}

/// Review state for one work directory.
#[derive(Debug)]
pub struct ReviewStore {
    root: PathBuf,
    mode: LabelMode,
    pairs: BTreeMap<String, PairState>,
    elapsed: Vec<f64>,
}

impl ReviewStore {
    /// Loads the pairs and transferred labels under `root` and replays the
    /// decision log, if any.
    pub fn open(root: &Path, mode: LabelMode) -> Result<Self> {
        let pairs_path = root.join(PAIRS_FILE);
        let text = fs::read_to_string(&pairs_path).map_err(|e| Error::io(&pairs_path, e))?;
        let outcome: PairingOutcome = serde_json::from_str(&text).map_err(|e| Error::json(&pairs_path, e))?;
        let mut pairs = BTreeMap::new();
        for pair in outcome.pairs {
            let mut labels = BTreeMap::new();
            for &band in pair.images.keys() {
                let path = root.join(LABELS_DIR).join(band.dir_name()).join(format!("{}.txt", pair.pair_id));
                let file = if path.exists() {
                    maskio::read_label_file(&path, mode)?
                } else {
                    LabelFile { pair_id: pair.pair_id.clone(), records: Vec::new() }
                };
                labels.insert(band, file);
            }
            pairs.insert(pair.pair_id.clone(), PairState { pair, labels, decision: None, tokens: BTreeSet::new() });
        }
        let mut store = ReviewStore { root: root.to_path_buf(), mode, pairs, elapsed: Vec::new() };
        let log = root.join(DECISION_LOG);
        if log.exists() {
            let text = fs::read_to_string(&log).map_err(|e| Error::io(&log, e))?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let corrupt = |message: String| ReviewError::CorruptLog { line: i + 1, message };
                let decision: ReviewDecision = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
                store.apply(decision).map_err(|e| corrupt(e.to_string()))?;
            }
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn entry(state: &PairState) -> ReviewQueueEntry {
        ReviewQueueEntry {
            pair_id: state.pair.pair_id.clone(),
            status: if state.decision.is_some() { Status::Decided } else { Status::Pending },
            decision: state.decision.clone(),
        }
    }

    /// Pending pairs in pair-id order.
    pub fn list_pending(&self, limit: usize, offset: usize) -> Vec<ReviewQueueEntry> {
        self.pairs.values().filter(|s| s.decision.is_none()).skip(offset).take(limit).map(Self::entry).collect()
    }

    pub fn list_all(&self, limit: usize, offset: usize) -> Vec<ReviewQueueEntry> {
        self.pairs.values().skip(offset).take(limit).map(Self::entry).collect()
    }

    fn state(&self, pair_id: &str) -> Result<&PairState, ReviewError> {
        self.pairs.get(pair_id).ok_or_else(|| ReviewError::NotFound(pair_id.to_string()))
    }

    pub fn get_pair(&self, pair_id: &str) -> Result<PairView> {
        let state = self.state(pair_id)?;
        let mask_path = self.root.join(MASKS_DIR).join(format!("{pair_id}.json"));
        let masks = if mask_path.exists() {
            let text = fs::read_to_string(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
            Some(MaskFile::from_json(&text).map_err(|e| Error::json(&mask_path, e))?)
        } else {
            None
        };
        Ok(PairView {
            pair_id: pair_id.to_string(),
            status: Self::entry(state).status,
            bands: state.pair.images.keys().copied().collect(),
            labels: state.labels.clone(),
            masks,
            decision: state.decision.clone(),
        })
    }

    /// Image path for one band of a pair; relative paths resolve against
    /// the work directory.
    pub fn image_path(&self, pair_id: &str, band: Band) -> Result<PathBuf, ReviewError> {
        let state = self.state(pair_id)?;
        let path = state
            .pair
            .images
            .get(&band)
            .ok_or_else(|| ReviewError::NotFound(format!("{pair_id}/{band}")))?;
        Ok(if path.is_absolute() { path.clone() } else { self.root.join(path) })
    }

    /// One band of a pair re-encoded as PNG.
    pub fn image_png(&self, pair_id: &str, band: Band) -> Result<Vec<u8>> {
        let path = self.image_path(pair_id, band)?;
        let img = image::open(&path).map_err(|e| Error::image(&path, e))?;
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| Error::image(&path, e))?;
        Ok(buf.into_inner())
    }

    /// Applies a decision to in-memory state without touching disk.
    fn apply(&mut self, mut decision: ReviewDecision) -> Result<(), ReviewError> {
        decision.validate()?;
        decision.elapsed_seconds = decision.elapsed_seconds.min(MAX_ELAPSED_SECONDS);
        let state = self.pairs.get_mut(&decision.pair_id).ok_or_else(|| ReviewError::NotFound(decision.pair_id.clone()))?;
        if !state.pair.images.contains_key(&decision.band) {
            return Err(ReviewError::Validation(format!("pair `{}` has no {} image", decision.pair_id, decision.band)));
        }
        if let (Action::Edit, Some(labels)) = (decision.action, &decision.edited_labels) {
            state.labels.insert(decision.band, labels.clone());
        }
        if let Some(token) = &decision.token {
            state.tokens.insert(token.clone());
        }
        self.elapsed.push(decision.elapsed_seconds);
        state.decision = Some(decision);
        Ok(())
    }

    /// Records a decision: appends it to the log, then materializes edited
    /// labels. A retry carrying an already-logged token returns the current
    /// entry unchanged.
    pub fn post_decision(&mut self, decision: ReviewDecision, allow_rereview: bool) -> Result<ReviewQueueEntry> {
        let state = self.state(&decision.pair_id)?;
        if decision.token.as_ref().is_some_and(|t| state.tokens.contains(t)) {
            return Ok(Self::entry(state));
        }
        if state.decision.is_some() && !allow_rereview {
            return Err(ReviewError::Conflict(decision.pair_id.clone()).into());
        }
        // Validate fully before the log sees anything.
        let mut probe = decision.clone();
        probe.elapsed_seconds = probe.elapsed_seconds.min(MAX_ELAPSED_SECONDS);
        probe.validate()?;
        if !state.pair.images.contains_key(&probe.band) {
            return Err(ReviewError::Validation(format!("pair `{}` has no {} image", probe.pair_id, probe.band)).into());
        }

        let log = self.root.join(DECISION_LOG);
        if let Some(parent) = log.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let line = serde_json::to_string(&probe).map_err(|e| Error::json(&log, e))?;
        let mut f = OpenOptions::new().create(true).append(true).open(&log).map_err(|e| Error::io(&log, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&log, e))?;
        f.sync_data().map_err(|e| Error::io(&log, e))?;

        let pair_id = probe.pair_id.clone();
        let band = probe.band;
        let edited = probe.action == Action::Edit;
        self.apply(probe)?;
        if edited {
            let path = self.root.join(REVIEWED_LABELS_DIR).join(band.dir_name()).join(format!("{pair_id}.txt"));
            maskio::write_label_file(&path, &self.pairs[&pair_id].labels[&band], self.mode)?;
        }
        Ok(Self::entry(&self.pairs[&pair_id]))
    }

    pub fn review_stats(&self) -> ReviewStats {
        let decided = self.pairs.values().filter(|s| s.decision.is_some()).count();
        let pending = self.pairs.len() - decided;
        let mean = (!self.elapsed.is_empty()).then(|| self.elapsed.iter().sum::<f64>() / self.elapsed.len() as f64);
        ReviewStats {
            total: self.pairs.len(),
            decided,
            pending,
            decisions_logged: self.elapsed.len(),
            mean_elapsed_seconds: mean,
            projected_hours: mean.map(|m| pending as f64 * m / 3600.0),
        }
    }

    /// Pairs whose current decision is a rejection.
    pub fn rejected(&self) -> BTreeSet<String> {
        self.pairs
            .values()
            .filter(|s| s.decision.as_ref().is_some_and(|d| d.action == Action::Reject))
            .map(|s| s.pair.pair_id.clone())
            .collect()
    }

    /// Current labels for every pair and band.
    pub fn labels(&self) -> BTreeMap<Band, Vec<LabelFile>> {
        let mut out: BTreeMap<Band, Vec<LabelFile>> = BTreeMap::new();
        for state in self.pairs.values() {
            for (band, labels) in &state.labels {
                out.entry(*band).or_default().push(labels.clone());
            }
        }
        out
    }

    pub fn labels_for(&self, pair_id: &str, band: Band) -> Result<&LabelFile, ReviewError> {
        self.state(pair_id)?.labels.get(&band).ok_or_else(|| ReviewError::NotFound(format!("{pair_id}/{band}")))
    }

    /// Writes the current labels of every pair to `out/<band>/<pair>.txt`.
    pub fn export_labels(&self, out: &Path) -> Result<usize> {
        let mut n = 0;
        for (band, files) in self.labels() {
            for file in files {
                let path = out.join(band.dir_name()).join(format!("{}.txt", file.pair_id));
                maskio::write_label_file(&path, &file, self.mode)?;
                n += 1;
            }
        }
        Ok(n)
    }
}
