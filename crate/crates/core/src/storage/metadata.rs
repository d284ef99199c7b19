use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Run id used for records rebuilt from the data files.
pub const REGENERATED_PREFIX: &str = "regenerated";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub run_id: String,
    /// Per-frame share of the batch compute time; `None` when unknown.
    pub duration_s: Option<f64>,
    pub stored_binary: bool,
    pub stored_image: bool,
    pub status: FrameStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stats: BTreeMap<String, f64>,
}

impl FrameRecord {
    pub fn is_ok(&self) -> bool {
        self.status == FrameStatus::Ok
    }
}

/// `<repr>/representation_metadata.json`: one record per frame, sorted by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprMetadata {
    pub format_version: u32,
    pub name: String,
    pub frames: Vec<FrameRecord>,
}

impl ReprMetadata {
    pub fn empty(name: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            name: name.to_string(),
            frames: Vec::new(),
        }
    }

    pub fn get(&self, frame_index: usize) -> Option<&FrameRecord> {
        self.frames
            .binary_search_by_key(&frame_index, |r| r.frame_index)
            .ok()
            .map(|i| &self.frames[i])
    }

    /// Inserts or replaces records. Returns `(frame, previous run id)` for
    /// every replaced record that came from a different run.
    pub fn merge(&mut self, records: impl IntoIterator<Item = FrameRecord>) -> Vec<(usize, String)> {
        let mut by_index: BTreeMap<usize, FrameRecord> =
            self.frames.drain(..).map(|r| (r.frame_index, r)).collect();
        let mut replaced = Vec::new();
        for record in records {
            if let Some(prev) = by_index.insert(record.frame_index, record.clone()) {
                if prev.run_id != record.run_id {
                    replaced.push((record.frame_index, prev.run_id));
                }
            }
        }
        self.frames = by_index.into_values().collect();
        replaced
    }

    pub fn ok_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.frames.iter().filter(|r| r.is_ok()).map(|r| r.frame_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReprRunStats {
    pub duration_s: f64,
    pub computed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub compute_calls: usize,
    /// Batch sizes in the order they were attempted after a resource failure,
    /// e.g. `[20, 10, 5, 2]`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub batch_size_changes: Vec<usize>,
}

/// `.logs/run_metadata_<id>.json`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub format_version: u32,
    pub run_id: String,
    pub status: RunStatus,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub duration_s: Option<f64>,
    pub video: String,
    /// `[start, end)`
    pub frame_range: [usize; 2],
    pub device: String,
    pub representations: BTreeMap<String, ReprRunStats>,
}

impl RunMetadata {
    pub fn new(run_id: &str, video: &str, frame_range: [usize; 2], device: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            run_id: run_id.to_string(),
            status: RunStatus::Running,
            started_at: Utc::now(),
            ended_at: None,
            duration_s: None,
            video: video.to_string(),
            frame_range,
            device: device.to_string(),
            representations: BTreeMap::new(),
        }
    }

    pub fn total_failed(&self) -> usize {
        self.representations.values().map(|s| s.failed).sum()
    }

    pub fn total_compute_calls(&self) -> usize {
        self.representations.values().map(|s| s.compute_calls).sum()
    }
}
