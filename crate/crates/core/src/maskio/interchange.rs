//! JSON mask interchange file, one per image:
//! `{pair_id, width, height, ontology: [..], masks: [{category_id, confidence, rle: [..]}]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mask, MaskSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFileEntry {
    pub category_id: u32,
    pub confidence: f64,
    pub rle: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskFile {
    pub pair_id: String,
    pub width: u32,
    pub height: u32,
    pub ontology: Vec<String>,
    pub masks: Vec<MaskFileEntry>,
}

impl MaskFile {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Reads and validates one interchange file.
    pub fn read(path: &Path) -> Result<MaskSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file = Self::from_json(&text).map_err(|e| Error::json(path, e))?;
        let set = file.into_mask_set();
        set.validate()?;
        Ok(set)
    }

    pub fn write(set: &MaskSet, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&MaskFile::from(set)).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn into_mask_set(self) -> MaskSet {
        let (width, height) = (self.width, self.height);
        MaskSet {
            pair_id: self.pair_id,
            width,
            height,
            masks: self
                .masks
                .into_iter()
                .map(|m| Mask { width, height, runs: m.rle, category_id: m.category_id, confidence: m.confidence })
                .collect(),
            ontology: self.ontology,
        }
    }
}

impl From<&MaskSet> for MaskFile {
    fn from(set: &MaskSet) -> Self {
        MaskFile {
            pair_id: set.pair_id.clone(),
            width: set.width,
            height: set.height,
            ontology: set.ontology.clone(),
            masks: set
                .masks
                .iter()
                .map(|m| MaskFileEntry { category_id: m.category_id, confidence: m.confidence, rle: m.runs.clone() })
                .collect(),
        }
    }
}
