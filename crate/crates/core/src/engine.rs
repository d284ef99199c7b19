//! Batch mode: every representation of a graph, in topological order, over a
//! frame range, exported to an [`ExportStore`].
//!
//! For each representation the frames of the range that still need work are
//! split into contiguous batches. Each batch gets its decoded frames plus the
//! dependency outputs for exactly those frames, taken from an in-memory cache
//! of this run's results when present and read from disk otherwise. Cached
//! values are stored in their after-disk form (see
//! [`Representation::as_stored`]), so the source of a dependency never
//! changes the result.
//!
//! A resource-exhaustion error halves the batch size (from the size that
//! failed) and retries the same frames; the smaller size is kept for the rest
//! of that representation. Other errors fail the frames of the batch and the
//! run continues.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::config::{Config, GlobalConfig, OutputLayout};
use crate::graph::{build_graph, GraphError, RepresentationGraph};
use crate::representation::{
    split_frames, validate_output, FrameBatch, Registry, ReprError, ReprOutput, Representation,
};
use crate::storage::{ExportStore, FrameRecord, FrameStatus, ReprRunStats, RunMetadata, RunStatus, StorageError};
use crate::video::{VideoError, VideoSource};

/// Default byte budget for dependency outputs kept in memory.
pub const DEFAULT_CACHE_BYTES: usize = 512 << 20;

/// Frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameRange {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RangeError {
    #[error("frame range '{0}' is not of the form A..B")]
    Syntax(String),
    #[error("frame range {0}..{1} is empty")]
    Empty(usize, usize),
    #[error("frame range {start}..{end} exceeds the video's {count} frames")]
    PastEnd { start: usize, end: usize, count: usize },
}

impl FrameRange {
    pub fn new(start: usize, end: usize) -> Result<Self, RangeError> {
        if start >= end {
            return Err(RangeError::Empty(start, end));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }

    /// Checks the range against a video length.
    pub fn within(self, count: usize) -> Result<Self, RangeError> {
        if self.end > count {
            return Err(RangeError::PastEnd {
                start: self.start,
                end: self.end,
                count,
            });
        }
        Ok(self)
    }
}

impl FromStr for FrameRange {
    type Err = RangeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once("..").ok_or_else(|| RangeError::Syntax(s.to_string()))?;
        let parse = |t: &str| {
            if t.is_empty() || !t.bytes().all(|c| c.is_ascii_digit()) {
                return Err(RangeError::Syntax(s.to_string()));
            }
            t.parse::<usize>().map_err(|_| RangeError::Syntax(s.to_string()))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

impl fmt::Display for FrameRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Splits sorted frame indices into runs of consecutive frames, each cut into
/// chunks of at most `batch_size`. Gaps are never bridged.
pub fn make_batches(frames: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &f in frames {
        match out.last_mut() {
            Some(last) if last.len() < batch_size && last.last() == Some(&(f.wrapping_sub(1))) => last.push(f),
            _ => out.push(vec![f]),
        }
    }
    out
}

/// The next batch size after a resource failure at `size`.
pub fn halve_batch(size: usize) -> usize {
    (size / 2).max(1)
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error(transparent)]
    Range(#[from] RangeError),
    #[error("representation '{name}': {source}")]
    Repr {
        name: String,
        #[source]
        source: ReprError,
    },
}

/// Per-run settings, typically from the command line.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// `None` means the whole video.
    pub frames: Option<FrameRange>,
    /// Replaces the global batch size (per-representation overrides still win).
    pub batch_size: Option<usize>,
    pub skip_computed: bool,
    /// Replaces every representation's compression setting.
    pub compression: Option<bool>,
    /// Adds image export to every representation.
    pub export_images: bool,
    /// Writes missing images for frames that are skipped as already computed.
    pub rerun_images: bool,
    pub device: String,
    pub run_id: Option<String>,
    pub cache_bytes: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            frames: None,
            batch_size: None,
            skip_computed: false,
            compression: None,
            export_images: false,
            rerun_images: false,
            device: "cpu".into(),
            run_id: None,
            cache_bytes: DEFAULT_CACHE_BYTES,
        }
    }
}

/// A fresh run id: UTC timestamp plus a random suffix.
pub fn new_run_id() -> String {
    let id = uuid::Uuid::new_v4().simple().to_string();
    format!("{}-{}", chrono::Utc::now().format("%Y%m%d-%H%M%S"), &id[..8])
}

/// Appends to `.logs/log_<id>.txt` and mirrors every line to the `log` facade.
pub struct RunLog {
    file: Option<File>,
}

impl RunLog {
    pub fn open(store: &ExportStore, run_id: &str) -> Self {
        let file = OpenOptions::new().create(true).append(true).open(store.log_path(run_id));
        if let Err(e) = &file {
            log::warn!("cannot open run log: {e}");
        }
        Self { file: file.ok() }
    }

    pub fn info(&mut self, line: &str) {
        log::info!("{line}");
        self.write("INFO", line);
    }

    pub fn warn(&mut self, line: &str) {
        log::warn!("{line}");
        self.write("WARN", line);
    }

    fn write(&mut self, level: &str, line: &str) {
        if let Some(f) = &mut self.file {
            let ts = chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ");
            let _ = writeln!(f, "{ts} {level} {line}");
        }
    }
}

/// Outputs of this run kept for dependents, bounded by a byte budget.
struct DepCache {
    budget: usize,
    used: usize,
    frames: BTreeMap<String, BTreeMap<usize, ReprOutput>>,
}

impl DepCache {
    fn new(budget: usize) -> Self {
        Self {
            budget,
            used: 0,
            frames: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: &str, frame: usize, out: ReprOutput) {
        let bytes = out.data.byte_len();
        if self.used + bytes > self.budget {
            return;
        }
        self.used += bytes;
        if let Some(old) = self.frames.entry(name.to_string()).or_default().insert(frame, out) {
            self.used -= old.data.byte_len();
        }
    }

    fn get(&self, name: &str, frame: usize) -> Option<&ReprOutput> {
        self.frames.get(name)?.get(&frame)
    }

    fn has(&self, name: &str, frame: usize) -> bool {
        self.get(name, frame).is_some()
    }

    fn drop_repr(&mut self, name: &str) {
        if let Some(m) = self.frames.remove(name) {
            self.used -= m.values().map(|o| o.data.byte_len()).sum::<usize>();
        }
    }
}

pub struct Engine {
    graph: RepresentationGraph,
    globals: GlobalConfig,
    store: ExportStore,
    instances: BTreeMap<String, Box<dyn Representation>>,
}

impl Engine {
    /// An engine for every representation of `config`.
    pub fn new(config: &Config, registry: &Registry, store: ExportStore) -> Result<Self, EngineError> {
        let graph = build_graph(&config.representations)?;
        Self::with_graph(graph, config.globals.clone(), registry, store)
    }

    /// An engine for a (sub)graph, e.g. one group of a partition.
    pub fn with_graph(
        graph: RepresentationGraph,
        globals: GlobalConfig,
        registry: &Registry,
        store: ExportStore,
    ) -> Result<Self, EngineError> {
        let mut instances = BTreeMap::new();
        for spec in graph.nodes().chain(graph.disk_inputs()) {
            let inst = registry.create(spec).map_err(|source| EngineError::Repr {
                name: spec.name.clone(),
                source,
            })?;
            instances.insert(spec.name.clone(), inst);
        }
        for spec in graph.nodes() {
            let dep_specs: Vec<_> = spec.deps.iter().map(|d| instances[d].output_spec()).collect();
            instances[&spec.name]
                .check_deps(&dep_specs)
                .map_err(|source| EngineError::Repr {
                    name: spec.name.clone(),
                    source,
                })?;
        }
        Ok(Self {
            graph,
            globals,
            store,
            instances,
        })
    }

    pub fn graph(&self) -> &RepresentationGraph {
        &self.graph
    }

    pub fn store(&self) -> &ExportStore {
        &self.store
    }

    pub fn run(&mut self, video: &mut dyn VideoSource, opts: &RunOptions) -> Result<RunMetadata, EngineError> {
        let count = video.frame_count();
        let range = match opts.frames {
            Some(r) => r.within(count)?,
            None => FrameRange::new(0, count)?,
        };
        let run_id = opts.run_id.clone().unwrap_or_else(new_run_id);
        let mut meta = RunMetadata::new(&run_id, &video.describe(), [range.start, range.end], &opts.device);
        self.store.write_run_metadata(&meta)?;
        let mut log = RunLog::open(&self.store, &run_id);
        log.info(&format!(
            "run {run_id}: {} frames {range} on '{}', order [{}]",
            video.describe(),
            opts.device,
            self.graph.topo_order().join(", ")
        ));
        let started = Instant::now();
        let mut cache = DepCache::new(opts.cache_bytes);
        let order = self.graph.topo_order().to_vec();
        let mut remaining_dependents: BTreeMap<String, usize> = order
            .iter()
            .map(|n| (n.clone(), self.graph.dependents(n).count()))
            .collect();

        for name in &order {
            let stats = self.run_representation(name, range, video, opts, &run_id, &mut cache, &mut log)?;
            log.info(&format!(
                "'{name}': {} computed, {} failed, {} skipped, {} compute calls in {:.3}s",
                stats.computed, stats.failed, stats.skipped, stats.compute_calls, stats.duration_s
            ));
            meta.representations.insert(name.clone(), stats);
            self.store.write_run_metadata(&meta)?;
            let deps = self.graph.node(name).map(|s| s.deps.clone()).unwrap_or_default();
            for dep in deps {
                if let Some(n) = remaining_dependents.get_mut(&dep) {
                    *n -= 1;
                    if *n == 0 {
                        cache.drop_repr(&dep);
                    }
                }
            }
            if remaining_dependents.get(name) == Some(&0) {
                cache.drop_repr(name);
            }
        }

        meta.status = RunStatus::Completed;
        meta.ended_at = Some(chrono::Utc::now());
        meta.duration_s = Some(started.elapsed().as_secs_f64());
        self.store.write_run_metadata(&meta)?;
        log.info(&format!(
            "run {run_id} finished in {:.3}s: {} compute calls, {} failed frames",
            started.elapsed().as_secs_f64(),
            meta.total_compute_calls(),
            meta.total_failed()
        ));
        Ok(meta)
    }

    fn layout_of(&self, name: &str, opts: &RunOptions) -> (OutputLayout, bool) {
        let spec = self.graph.node(name).expect("node exists");
        let mut layout = spec.effective_layout(&self.globals);
        if opts.export_images && layout == OutputLayout::BinaryOnly {
            layout = OutputLayout::BinaryAndImage;
        }
        let compress = opts.compression.unwrap_or_else(|| spec.effective_compression(&self.globals));
        (layout, compress)
    }

    /// Frames of `dep` usable as inputs: cached now, or stored as binary.
    fn available(&self, dep: &str, frames: &[usize], cache: &DepCache) -> Result<BTreeSet<usize>, EngineError> {
        let meta = self.store.load_metadata(dep)?;
        Ok(frames
            .iter()
            .copied()
            .filter(|&f| cache.has(dep, f) || meta.get(f).is_some_and(|r| r.is_ok() && r.stored_binary))
            .collect())
    }

    fn load_dep(&self, dep: &str, frames: &[usize], cache: &DepCache) -> Result<ReprOutput, ReprError> {
        let inst = &self.instances[dep];
        let mut parts = Vec::with_capacity(frames.len());
        for &f in frames {
            match cache.get(dep, f) {
                Some(out) => parts.push(out.clone()),
                None => parts.push(
                    self.store
                        .read_frame(inst.as_ref(), dep, f)
                        .map_err(|e| ReprError::DependencyMismatch(format!("loading '{dep}' frame {f}: {e}")))?,
                ),
            }
        }
        ReprOutput::concat(&parts).ok_or_else(|| ReprError::DependencyMismatch(format!("'{dep}' frames differ in shape")))
    }

    #[allow(clippy::too_many_arguments)]
    fn run_representation(
        &mut self,
        name: &str,
        range: FrameRange,
        video: &mut dyn VideoSource,
        opts: &RunOptions,
        run_id: &str,
        cache: &mut DepCache,
        log: &mut RunLog,
    ) -> Result<ReprRunStats, EngineError> {
        let started = Instant::now();
        let spec = self.graph.node(name).expect("node exists").clone();
        let (layout, compress) = self.layout_of(name, opts);
        let keep_in_memory = self.graph.dependents(name).next().is_some();
        let mut stats = ReprRunStats::default();

        let all: Vec<usize> = range.iter().collect();
        let done = if opts.skip_computed {
            self.store.already_computed(name, all.iter().copied())?
        } else {
            BTreeSet::new()
        };
        stats.skipped = done.len();
        if opts.rerun_images && layout.has_image() && !done.is_empty() {
            self.rerun_images(name, &done, log)?;
        }
        let mut todo: Vec<usize> = all.into_iter().filter(|f| !done.contains(f)).collect();

        let mut records = Vec::new();
        for dep in &spec.deps {
            let avail = self.available(dep, &todo, cache)?;
            let (ok, missing): (Vec<usize>, Vec<usize>) = todo.iter().partition(|f| avail.contains(f));
            for f in missing {
                records.push(failed_record(f, run_id, format!("dependency '{dep}' is not available for this frame")));
            }
            todo = ok;
        }
        if !records.is_empty() {
            log.warn(&format!("'{name}': {} frames lack dependency outputs", records.len()));
            stats.failed += records.len();
            self.commit(name, std::mem::take(&mut records), run_id, log)?;
        }
        if todo.is_empty() {
            stats.duration_s = started.elapsed().as_secs_f64();
            return Ok(stats);
        }

        let inst = self.instances.get_mut(name).expect("instance exists");
        if inst.is_learned() {
            let setup = inst.setup(&opts.device).and_then(|_| inst.load_weights());
            if let Err(e) = setup {
                log.warn(&format!("'{name}': setup failed: {e}"));
            }
        }

        let mut batch_size = opts
            .batch_size
            .filter(|_| spec.batch_size_override.is_none())
            .unwrap_or_else(|| spec.effective_batch_size(&self.globals));
        for chunk in make_batches(&todo, batch_size) {
            let mut pos = 0;
            while pos < chunk.len() {
                let size = batch_size.min(chunk.len() - pos);
                let frames = &chunk[pos..pos + size];
                let t0 = Instant::now();
                stats.compute_calls += 1;
                match self.compute_batch(name, &spec.deps, frames, video, cache) {
                    Ok(out) => {
                        let per_frame = t0.elapsed().as_secs_f64() / size as f64;
                        let recs = self.store_batch(name, frames, &out, layout, compress, per_frame, run_id, keep_in_memory, cache);
                        stats.computed += recs.iter().filter(|r| r.is_ok()).count();
                        stats.failed += recs.iter().filter(|r| !r.is_ok()).count();
                        self.commit(name, recs, run_id, log)?;
                        pos += size;
                    }
                    Err(BatchError::Fatal(e)) => return Err(e),
                    Err(BatchError::Repr(e)) if e.is_resource_exhausted() && size > 1 => {
                        let next = halve_batch(size);
                        log.warn(&format!(
                            "'{name}': resource exhausted at batch size {size} (frames {}..{}): {e}; retrying with batch size {next}",
                            frames[0],
                            frames[size - 1] + 1
                        ));
                        stats.batch_size_changes.push(next);
                        batch_size = next;
                    }
                    Err(BatchError::Repr(e)) => {
                        log.warn(&format!(
                            "'{name}': frames {}..{} failed: {e}",
                            frames[0],
                            frames[size - 1] + 1
                        ));
                        let recs: Vec<_> = frames.iter().map(|&f| failed_record(f, run_id, e.to_string())).collect();
                        stats.failed += recs.len();
                        self.commit(name, recs, run_id, log)?;
                        pos += size;
                    }
                }
            }
        }

        let inst = self.instances.get_mut(name).expect("instance exists");
        if inst.is_learned() {
            inst.unload_weights();
        }
        stats.duration_s = started.elapsed().as_secs_f64();
        Ok(stats)
    }

    fn compute_batch(
        &mut self,
        name: &str,
        deps: &[String],
        frames: &[usize],
        video: &mut dyn VideoSource,
        cache: &DepCache,
    ) -> Result<ReprOutput, BatchError> {
        let pixels = video
            .read_frames(frames[0], frames[frames.len() - 1] + 1)
            .map_err(|e| BatchError::Fatal(e.into()))?;
        let batch = FrameBatch::new(frames.to_vec(), pixels);
        let dep_outputs = deps
            .iter()
            .map(|d| self.load_dep(d, frames, cache))
            .collect::<Result<Vec<_>, _>>()
            .map_err(BatchError::Repr)?;
        let dep_refs: Vec<&ReprOutput> = dep_outputs.iter().collect();
        let inst = self.instances.get_mut(name).expect("instance exists");
        let out = inst.compute(&batch, &dep_refs).map_err(BatchError::Repr)?;
        validate_output(name, &batch, &inst.output_spec(), &out).map_err(BatchError::Repr)?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn store_batch(
        &self,
        name: &str,
        frames: &[usize],
        out: &ReprOutput,
        layout: OutputLayout,
        compress: bool,
        per_frame_s: f64,
        run_id: &str,
        keep_in_memory: bool,
        cache: &mut DepCache,
    ) -> Vec<FrameRecord> {
        let inst = self.instances[name].as_ref();
        frames
            .iter()
            .zip(split_frames(out))
            .map(|(&f, frame)| {
                let result = (|| -> Result<(bool, bool), String> {
                    let image = if layout.has_image() {
                        Some(inst.make_image(&frame).map_err(|e| e.to_string())?)
                    } else {
                        None
                    };
                    let stored = self
                        .store
                        .write_frame(inst, name, f, &frame, image.as_ref(), layout.has_binary(), compress)
                        .map_err(|e| e.to_string())?;
                    Ok((stored.binary, stored.image))
                })();
                let stats = frame.frame_stats.first().cloned().unwrap_or_default();
                if keep_in_memory && result.is_ok() {
                    match inst.as_stored(&frame) {
                        Ok(stored) => cache.insert(name, f, stored),
                        Err(e) => log::warn!("'{name}' frame {f}: cannot cache: {e}"),
                    }
                }
                match result {
                    Ok((binary, image)) => FrameRecord {
                        frame_index: f,
                        run_id: run_id.to_string(),
                        duration_s: Some(per_frame_s),
                        stored_binary: binary,
                        stored_image: image,
                        status: FrameStatus::Ok,
                        error: None,
                        stats,
                    },
                    Err(e) => failed_record(f, run_id, e),
                }
            })
            .collect()
    }

    fn commit(&self, name: &str, records: Vec<FrameRecord>, run_id: &str, log: &mut RunLog) -> Result<(), EngineError> {
        let replaced = self.store.commit_records(name, records)?;
        let mut checked: BTreeMap<String, bool> = BTreeMap::new();
        for (frame, prev) in replaced {
            let concurrent = *checked.entry(prev.clone()).or_insert_with(|| {
                prev != run_id
                    && self
                        .store
                        .read_run_metadata(&prev)
                        .is_ok_and(|m| m.status == RunStatus::Running)
            });
            if concurrent {
                log.warn(&format!(
                    "'{name}' frame {frame}: overwrote a record of run {prev}, which is still running (last writer wins)"
                ));
            }
        }
        Ok(())
    }

    fn rerun_images(&mut self, name: &str, done: &BTreeSet<usize>, log: &mut RunLog) -> Result<(), EngineError> {
        let meta = self.store.load_metadata(name)?;
        let inst = self.instances[name].as_ref();
        let mut updated = Vec::new();
        for &f in done {
            let Some(rec) = meta.get(f) else { continue };
            if rec.stored_image || !rec.stored_binary {
                continue;
            }
            let frame = self.store.read_frame(inst, name, f)?;
            match inst.make_image(&frame) {
                Ok(img) => {
                    self.store.ensure_repr_dirs(name, false, true)?;
                    self.store.write_image(name, f, &img)?;
                    let mut rec = rec.clone();
                    rec.stored_image = true;
                    updated.push(rec);
                }
                Err(e) => log.warn(&format!("'{name}' frame {f}: image failed: {e}")),
            }
        }
        if !updated.is_empty() {
            log.info(&format!("'{name}': wrote {} missing images", updated.len()));
            self.store.commit_records(name, updated)?;
        }
        Ok(())
    }
}

enum BatchError {
    Repr(ReprError),
    Fatal(EngineError),
}

fn failed_record(frame: usize, run_id: &str, error: String) -> FrameRecord {
    FrameRecord {
        frame_index: frame,
        run_id: run_id.to_string(),
        duration_s: None,
        stored_binary: false,
        stored_image: false,
        status: FrameStatus::Failed,
        error: Some(error),
        stats: BTreeMap::new(),
    }
}
