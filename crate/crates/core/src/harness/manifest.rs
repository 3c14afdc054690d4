use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::MetricSummary;
use super::{atomic_write, HarnessError};
use crate::corpus::Target;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub target: Target,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_s: f64,
    /// Relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    /// Train and test keys are disjoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_free: Option<bool>,
}

impl ManifestEntry {
    pub fn pending(target: Target) -> Self {
        Self {
            target,
            status: Status::Pending,
            error: None,
            wall_time_s: 0.0,
            report_path: None,
            model_path: None,
            leakage_free: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub dataset: String,
    pub entries: Vec<ManifestEntry>,
    /// Utterances whose frames or features could not be produced.
    #[serde(default)]
    pub failed_utterances: BTreeMap<String, String>,
    /// Mean, min and max over completed combinations.
    #[serde(default)]
    pub aggregate: BTreeMap<String, MetricSummary>,
}

impl RunManifest {
    pub fn path_in(output: &Path) -> PathBuf {
        output.join(MANIFEST_FILE)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        atomic_write(path, &json)
    }

    pub fn entry(&self, target: &Target) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| &e.target == target)
    }

    pub fn entry_mut(&mut self, target: &Target) -> Option<&mut ManifestEntry> {
        self.entries.iter_mut().find(|e| &e.target == target)
    }

    pub fn completed(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.status == Status::Completed)
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| e.status != Status::Completed).count()
    }
}
