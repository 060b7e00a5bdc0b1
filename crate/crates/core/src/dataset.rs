//! Gaze dataset manifests and prediction files.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{GazeAngles, ParticipantErrors, AngularMetric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Eye {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraPosition {
    HigherTemporal,
    LowerTemporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Relative paths resolve against the manifest's directory.
    pub frame_path: PathBuf,
    pub gaze_gt: GazeAngles,
    pub condition_tag: String,
    pub sequence_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantEntry {
    pub participant_id: String,
    pub eye: Eye,
    pub camera_position: CameraPosition,
    pub records: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub participants: Vec<ParticipantEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// A loaded manifest with every frame path resolved to an existing file.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeDataset {
    pub root: PathBuf,
    pub participants: Vec<ParticipantEntry>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl GazeDataset {
    /// Participants whose record list is empty; statistics must not be run on them.
    pub fn empty_participants(&self) -> Vec<&str> {
        self.participants
            .iter()
            .filter(|p| p.records.is_empty())
            .map(|p| p.participant_id.as_str())
            .collect()
    }

    pub fn n_records(&self) -> usize {
        self.participants.iter().map(|p| p.records.len()).sum()
    }
}

pub fn load_gaze_dataset(manifest_path: &Path) -> Result<GazeDataset> {
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            path: manifest_path.to_path_buf(),
            message: e.to_string(),
        })?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();

    let mut seen = HashSet::new();
    let mut participants = Vec::with_capacity(manifest.participants.len());
    for mut p in manifest.participants {
        if !seen.insert(p.participant_id.clone()) {
            return Err(Error::DuplicateParticipant(p.participant_id));
        }
        for r in &mut p.records {
            if !r.gaze_gt.in_range() {
                return Err(Error::ParseError {
                    path: manifest_path.to_path_buf(),
                    message: format!(
                        "gaze ({}, {}) outside [-90, 90] for {}",
                        r.gaze_gt.yaw,
                        r.gaze_gt.pitch,
                        r.frame_path.display()
                    ),
                });
            }
            let resolved = root.join(&r.frame_path);
            if !resolved.is_file() {
                return Err(Error::UnresolvedFramePath(resolved));
            }
            r.frame_path = resolved;
        }
        participants.push(p);
    }
    Ok(GazeDataset {
        root,
        participants,
        metadata: manifest.metadata,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame_path: PathBuf,
    pub condition_tag: String,
    pub sequence_name: String,
    pub gaze_gt: GazeAngles,
    pub gaze_pred: GazeAngles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantPredictions {
    pub participant_id: String,
    pub records: Vec<PredictionRecord>,
}

/// Per-frame predictions for one model arm, as written by `predict` and read by `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub modality: String,
    pub participants: Vec<ParticipantPredictions>,
}

impl PredictionSet {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ParseError {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("predictions serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Per-frame angular errors grouped by participant, optionally restricted
    /// to one condition tag.
    pub fn errors(&self, metric: AngularMetric, condition: Option<&str>) -> Vec<ParticipantErrors> {
        self.participants
            .iter()
            .map(|p| ParticipantErrors {
                participant_id: p.participant_id.clone(),
                errors: p
                    .records
                    .iter()
                    .filter(|r| condition.is_none_or(|c| r.condition_tag == c))
                    .map(|r| metric.error(&r.gaze_pred, &r.gaze_gt))
                    .collect(),
            })
            .collect()
    }
}
