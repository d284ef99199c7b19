//! Human- and machine-readable summaries of an export directory.

use std::fmt::Write as _;

use serde::Serialize;

use crate::storage::{ExportStore, RunMetadata, StorageError};

/// Totals of one representation's metadata records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReprSummary {
    pub name: String,
    pub computed: usize,
    pub failed: usize,
    pub with_binary: usize,
    pub with_image: usize,
    /// Mean of the recorded per-frame durations of computed frames.
    pub avg_duration_s: Option<f64>,
    /// Sum of `skipped` over all runs.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inspection {
    pub runs: Vec<RunMetadata>,
    pub representations: Vec<ReprSummary>,
}

pub fn inspect(store: &ExportStore) -> Result<Inspection, StorageError> {
    let runs = store.list_runs()?;
    let mut representations = Vec::new();
    for name in store.representations()? {
        let meta = store.load_metadata(&name)?;
        let ok: Vec<_> = meta.frames.iter().filter(|r| r.is_ok()).collect();
        let durations: Vec<f64> = ok.iter().filter_map(|r| r.duration_s).collect();
        representations.push(ReprSummary {
            computed: ok.len(),
            failed: meta.frames.len() - ok.len(),
            with_binary: ok.iter().filter(|r| r.stored_binary).count(),
            with_image: ok.iter().filter(|r| r.stored_image).count(),
            avg_duration_s: (!durations.is_empty()).then(|| durations.iter().sum::<f64>() / durations.len() as f64),
            skipped: runs
                .iter()
                .filter_map(|r| r.representations.get(&name))
                .map(|s| s.skipped)
                .sum(),
            name,
        });
    }
    Ok(Inspection {
        runs,
        representations,
    })
}

impl Inspection {
    pub fn is_empty(&self) -> bool {
        self.runs.is_empty() && self.representations.is_empty()
    }

    pub fn to_table(&self) -> String {
        if self.is_empty() {
            return "no runs\n".to_string();
        }
        let mut s = String::new();
        if self.runs.is_empty() {
            s.push_str("no runs\n");
        } else {
            let _ = writeln!(s, "{:<34} {:<10} {:>11} {:>10} {:<10}", "run", "status", "frames", "duration", "device");
            for r in &self.runs {
                let dur = r.duration_s.map_or_else(|| "-".to_string(), |d| format!("{d:.3}s"));
                let range = format!("{}..{}", r.frame_range[0], r.frame_range[1]);
                let _ = writeln!(
                    s,
                    "{:<34} {:<10} {:>11} {:>10} {:<10}",
                    r.run_id,
                    format!("{:?}", r.status).to_lowercase(),
                    range,
                    dur,
                    r.device
                );
            }
        }
        s.push('\n');
        let _ = writeln!(
            s,
            "{:<20} {:>9} {:>7} {:>8} {:>7} {:>7} {:>14}",
            "representation", "computed", "failed", "skipped", "binary", "image", "avg s/frame"
        );
        for r in &self.representations {
            let avg = r.avg_duration_s.map_or_else(|| "-".to_string(), |d| format!("{d:.6}"));
            let _ = writeln!(
                s,
                "{:<20} {:>9} {:>7} {:>8} {:>7} {:>7} {:>14}",
                r.name, r.computed, r.failed, r.skipped, r.with_binary, r.with_image, avg
            );
        }
        s
    }

    /// One JSON object per line: runs first, then representations.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for r in &self.runs {
            let mut v = serde_json::to_value(r).expect("serializable");
            v["record"] = "run".into();
            let _ = writeln!(s, "{v}");
        }
        for r in &self.representations {
            let mut v = serde_json::to_value(r).expect("serializable");
            v["record"] = "representation".into();
            let _ = writeln!(s, "{v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::{FrameRecord, FrameStatus};

    fn record(i: usize, ok: bool, dur: f64) -> FrameRecord {
        FrameRecord {
            frame_index: i,
            run_id: "r".into(),
            duration_s: ok.then_some(dur),
            stored_binary: ok,
            stored_image: false,
            status: if ok { FrameStatus::Ok } else { FrameStatus::Failed },
            error: (!ok).then(|| "boom".into()),
            stats: Default::default(),
        }
    }

    #[test]
    fn fresh_directory() {
        let dir = tempfile::tempdir().unwrap();
        let store = ExportStore::create(dir.path()).unwrap();
        let ins = inspect(&store).unwrap();
        assert_eq!(ins.to_table(), "no runs\n");
        assert_eq!(ins.to_records(), "");
    }

    #[test]
    fn averages_match_records() {
        let dir = tempfile::tempdir().unwrap();
        let store = ExportStore::create(dir.path()).unwrap();
        store
            .commit_records("a", vec![record(0, true, 0.5), record(1, true, 1.5), record(2, false, 0.0)])
            .unwrap();
        let ins = inspect(&store).unwrap();
        assert_eq!(ins.representations.len(), 1);
        let a = &ins.representations[0];
        assert_eq!((a.computed, a.failed, a.with_binary), (2, 1, 2));
        assert_eq!(a.avg_duration_s, Some(1.0));
        let lines: Vec<serde_json::Value> =
            ins.to_records().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines[0]["record"], "representation");
        assert_eq!(lines[0]["computed"], 2);
    }
}
