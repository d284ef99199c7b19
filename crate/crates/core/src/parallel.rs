//! Multi-worker batch mode: one frame range split into contiguous slices,
//! one `vre run` child process per slice, all exporting into the same
//! directory.
//!
//! Children coordinate only through the store's locked metadata updates.
//! Each child gets its device label through [`ENV_DEVICES`] and a run id
//! chosen here, so its run metadata can be found afterwards.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus};
use std::time::Instant;

use thiserror::Error;

use crate::engine::{new_run_id, FrameRange};
use crate::storage::{ExportStore, ReprRunStats, RunMetadata, RunStatus};

/// Device labels visible to a worker, comma separated.
pub const ENV_DEVICES: &str = "VRE_DEVICES";

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error("{workers} workers for {frames} frames: every worker needs at least one frame")]
    TooManyWorkers { workers: usize, frames: usize },
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("cannot start worker {index} ({command}): {source}")]
    Spawn {
        index: usize,
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("waiting for worker {index}: {source}")]
    Wait {
        index: usize,
        #[source]
        source: std::io::Error,
    },
}

/// Near-equal contiguous slices; the first `len % n` slices get one extra
/// frame.
pub fn plan_slices(range: FrameRange, workers: usize) -> Result<Vec<FrameRange>, ParallelError> {
    if workers == 0 {
        return Err(ParallelError::NoWorkers);
    }
    if range.len() < workers {
        return Err(ParallelError::TooManyWorkers {
            workers,
            frames: range.len(),
        });
    }
    let (base, extra) = (range.len() / workers, range.len() % workers);
    let mut start = range.start;
    Ok((0..workers)
        .map(|i| {
            let end = start + base + usize::from(i < extra);
            let slice = FrameRange { start, end };
            start = end;
            slice
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct WorkerSpec {
    pub index: usize,
    pub device: String,
    pub frames: FrameRange,
    pub run_id: String,
    pub args: Vec<OsString>,
}

impl WorkerSpec {
    pub fn command_line(&self, exe: &Path) -> String {
        let mut parts = vec![format!("{}={}", ENV_DEVICES, self.device), exe.display().to_string()];
        parts.extend(self.args.iter().map(|a| shell_quote(&a.to_string_lossy())));
        parts.join(" ")
    }
}

fn shell_quote(s: &str) -> String {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_./=:,".contains(&b)) {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', r"'\''"))
    }
}

#[derive(Debug, Clone)]
pub struct WorkerPlan {
    /// The `vre` executable the children run.
    pub exe: PathBuf,
    pub workers: Vec<WorkerSpec>,
}

/// What every child shares.
#[derive(Debug, Clone)]
pub struct ParallelJob {
    pub video: PathBuf,
    pub config: PathBuf,
    pub output: PathBuf,
    pub frames: FrameRange,
    pub workers: usize,
    /// Labels handed out round-robin. Empty means `cpu` for everyone.
    pub devices: Vec<String>,
    /// Passed through to each `run` (e.g. `--batch_size 4 --skip_computed`).
    pub extra_args: Vec<OsString>,
}

impl WorkerPlan {
    pub fn new(exe: &Path, job: &ParallelJob) -> Result<Self, ParallelError> {
        let slices = plan_slices(job.frames, job.workers)?;
        let group = new_run_id();
        let workers = slices
            .into_iter()
            .enumerate()
            .map(|(index, frames)| {
                let device = if job.devices.is_empty() {
                    "cpu".to_string()
                } else {
                    job.devices[index % job.devices.len()].clone()
                };
                let run_id = format!("{group}-w{index}");
                let mut args: Vec<OsString> = vec![
                    "run".into(),
                    job.video.clone().into(),
                    "--config_path".into(),
                    job.config.clone().into(),
                    "-o".into(),
                    job.output.clone().into(),
                    "--frames".into(),
                    frames.to_string().into(),
                    "--run_id".into(),
                    run_id.clone().into(),
                ];
                args.extend(job.extra_args.iter().cloned());
                WorkerSpec {
                    index,
                    device,
                    frames,
                    run_id,
                    args,
                }
            })
            .collect();
        Ok(Self {
            exe: exe.to_path_buf(),
            workers,
        })
    }
}

#[derive(Debug, Clone)]
pub struct WorkerResult {
    pub spec: WorkerSpec,
    pub exit_code: Option<i32>,
    pub wall_s: f64,
    /// `None` if the child never wrote run metadata.
    pub run: Option<RunMetadata>,
}

impl WorkerResult {
    /// Exited cleanly (0 or 2, which means some frames failed) and recorded
    /// the run as completed.
    pub fn completed(&self) -> bool {
        matches!(self.exit_code, Some(0) | Some(2))
            && self.run.as_ref().is_some_and(|r| r.status == RunStatus::Completed)
    }
}

#[derive(Debug, Clone)]
pub struct ParallelSummary {
    pub wall_s: f64,
    pub workers: Vec<WorkerResult>,
    /// Per-representation totals over the workers that wrote run metadata.
    pub totals: BTreeMap<String, ReprRunStats>,
}

impl ParallelSummary {
    pub fn incomplete(&self) -> impl Iterator<Item = &WorkerResult> {
        self.workers.iter().filter(|w| !w.completed())
    }

    pub fn total_failed(&self) -> usize {
        self.totals.values().map(|s| s.failed).sum()
    }

    /// 0 if every worker completed with no failed frames, 2 if frames
    /// failed, 1 if a worker did not complete.
    pub fn exit_code(&self) -> i32 {
        if self.incomplete().next().is_some() {
            1
        } else if self.total_failed() > 0 {
            2
        } else {
            0
        }
    }
}

impl fmt::Display for ParallelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} workers, wall time {:.3}s", self.workers.len(), self.wall_s)?;
        for w in &self.workers {
            let status = match (w.completed(), w.exit_code) {
                (true, _) => "completed".to_string(),
                (false, Some(c)) => format!("INCOMPLETE (exit {c})"),
                (false, None) => "INCOMPLETE (killed)".to_string(),
            };
            writeln!(
                f,
                "  worker {} [{}] frames {}: {} in {:.3}s",
                w.spec.index, w.spec.device, w.spec.frames, status, w.wall_s
            )?;
        }
        for (name, s) in &self.totals {
            writeln!(
                f,
                "  {name}: {} computed, {} failed, {} skipped, {:.3}s compute",
                s.computed, s.failed, s.skipped, s.duration_s
            )?;
        }
        Ok(())
    }
}

/// Children that are running.
pub struct ParallelRun {
    started: Instant,
    output: PathBuf,
    children: Vec<(WorkerSpec, Child, Instant)>,
}

impl ParallelRun {
    /// Spawns every worker, printing each command line first.
    pub fn spawn(plan: &WorkerPlan, output: &Path) -> Result<Self, ParallelError> {
        let started = Instant::now();
        let mut children = Vec::with_capacity(plan.workers.len());
        for w in &plan.workers {
            let line = w.command_line(&plan.exe);
            println!("Executing: {line}");
            let child = Command::new(&plan.exe)
                .args(&w.args)
                .env(ENV_DEVICES, &w.device)
                .spawn()
                .map_err(|source| ParallelError::Spawn {
                    index: w.index,
                    command: line,
                    source,
                })?;
            children.push((w.clone(), child, Instant::now()));
        }
        Ok(Self {
            started,
            output: output.to_path_buf(),
            children,
        })
    }

    pub fn pids(&self) -> Vec<u32> {
        self.children.iter().map(|(_, c, _)| c.id()).collect()
    }

    /// Kills worker `index` (used for fault injection).
    pub fn kill(&mut self, index: usize) -> std::io::Result<()> {
        self.children[index].1.kill()
    }

    pub fn wait(self) -> Result<ParallelSummary, ParallelError> {
        let mut results = Vec::with_capacity(self.children.len());
        for (spec, mut child, t0) in self.children {
            let status: ExitStatus = child.wait().map_err(|source| ParallelError::Wait {
                index: spec.index,
                source,
            })?;
            results.push((spec, status.code(), t0.elapsed().as_secs_f64()));
        }
        let wall_s = self.started.elapsed().as_secs_f64();
        let store = ExportStore::open(&self.output);
        let workers: Vec<WorkerResult> = results
            .into_iter()
            .map(|(spec, exit_code, wall)| WorkerResult {
                run: store.read_run_metadata(&spec.run_id).ok(),
                spec,
                exit_code,
                wall_s: wall,
            })
            .collect();
        Ok(ParallelSummary {
            wall_s,
            totals: merge_totals(workers.iter().filter_map(|w| w.run.as_ref())),
            workers,
        })
    }
}

/// Spawns the plan and waits for every child.
pub fn run_parallel(plan: &WorkerPlan, output: &Path) -> Result<ParallelSummary, ParallelError> {
    ParallelRun::spawn(plan, output)?.wait()
}

pub fn merge_totals<'a>(runs: impl IntoIterator<Item = &'a RunMetadata>) -> BTreeMap<String, ReprRunStats> {
    let mut totals: BTreeMap<String, ReprRunStats> = BTreeMap::new();
    for run in runs {
        for (name, s) in &run.representations {
            let t = totals.entry(name.clone()).or_default();
            t.computed += s.computed;
            t.failed += s.failed;
            t.skipped += s.skipped;
            t.compute_calls += s.compute_calls;
            t.duration_s += s.duration_s;
            t.batch_size_changes.extend(&s.batch_size_changes);
        }
    }
    totals
}
