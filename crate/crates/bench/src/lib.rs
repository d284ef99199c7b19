//! Desk-scale experiments over the engine, each producing CSV rows.
//!
//! The export-format, batch-size and streaming experiments run in-process on
//! the bundled natural clip. Parallel scaling launches the `vre` executable.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use ndarray::{Array4, Axis};
use vre_core::engine::{Engine, FrameRange, RunOptions};
use vre_core::parallel::{run_parallel, ParallelJob, WorkerPlan};
use vre_core::streaming::fps::SystemClock;
use vre_core::streaming::header::StreamHeader;
use vre_core::video::{natural_clip, write_raw_video, MemoryVideo};
use vre_core::{
    build_graph, serve_stream, Config, ExportStore, GlobalConfig, OutputLayout, Registry, RepresentationSpec,
    StreamOptions, StreamPipeline,
};

/// The representation set every batch experiment exports.
pub fn default_specs() -> Vec<RepresentationSpec> {
    vec![
        RepresentationSpec::new("rgb", "color/rgb", &[]),
        RepresentationSpec::new("hsv", "color/hsv", &[]),
        RepresentationSpec::new("edges", "edges/canny", &["rgb"]),
        RepresentationSpec::new("depth", "depth/stub", &[]),
        RepresentationSpec::new("normals", "normals/svd", &["depth"]),
    ]
}

/// Clip dimensions shared by the experiments.
#[derive(Debug, Clone, Copy)]
pub struct ClipSize {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl ClipSize {
    pub fn clip(&self) -> Array4<u8> {
        natural_clip(self.frames, self.height, self.width)
    }
}

fn run_once(clip: &Array4<u8>, config: &Config, root: &Path) -> Result<f64> {
    let registry = Registry::builtin();
    let mut engine = Engine::new(config, &registry, ExportStore::create(root)?)?;
    let t0 = Instant::now();
    let meta = engine.run(&mut MemoryVideo::new(clip.clone()), &RunOptions::default())?;
    ensure!(meta.total_failed() == 0, "run {} failed frames", meta.run_id);
    Ok(t0.elapsed().as_secs_f64())
}

fn tree_bytes(root: &Path) -> Result<u64> {
    let mut total = 0;
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir)? {
            let e = e?;
            let name = e.file_name();
            if name == ".logs" || name.to_string_lossy().ends_with(".json") {
                continue;
            }
            if e.file_type()?.is_dir() {
                stack.push(e.path());
            } else {
                total += e.metadata()?.len();
            }
        }
    }
    Ok(total)
}

fn layout_name(layout: OutputLayout) -> &'static str {
    match layout {
        OutputLayout::BinaryOnly => "binary_only",
        OutputLayout::BinaryAndImage => "binary_and_image",
        OutputLayout::ImageOnly => "image_only",
    }
}

/// Wall time and disk usage for every layout with and without compression.
pub fn export_formats(size: ClipSize, batch_size: usize) -> Result<String> {
    let clip = size.clip();
    let mut csv = String::from("layout,compression,frames,wall_s,bytes,bytes_per_frame\n");
    for layout in [OutputLayout::BinaryOnly, OutputLayout::BinaryAndImage, OutputLayout::ImageOnly] {
        for compression in [false, true] {
            if layout == OutputLayout::ImageOnly && compression {
                continue;
            }
            let dir = tempfile::tempdir()?;
            let config = Config {
                globals: GlobalConfig {
                    batch_size,
                    output_dir_layout: layout,
                    compression,
                    output_size: None,
                },
                representations: default_specs(),
            };
            let wall = run_once(&clip, &config, dir.path())?;
            let bytes = tree_bytes(dir.path())?;
            writeln!(
                csv,
                "{},{compression},{},{wall:.6},{bytes},{}",
                layout_name(layout),
                size.frames,
                bytes / size.frames as u64
            )?;
        }
    }
    Ok(csv)
}

/// Throughput against the configured batch size.
pub fn batch_scaling(size: ClipSize, batch_sizes: &[usize]) -> Result<String> {
    let clip = size.clip();
    let mut csv = String::from("batch_size,frames,wall_s,fps\n");
    for &batch_size in batch_sizes {
        let dir = tempfile::tempdir()?;
        let config = Config {
            globals: GlobalConfig {
                batch_size,
                ..GlobalConfig::default()
            },
            representations: default_specs(),
        };
        let wall = run_once(&clip, &config, dir.path())?;
        writeln!(csv, "{batch_size},{},{wall:.6},{:.3}", size.frames, size.frames as f64 / wall)?;
    }
    Ok(csv)
}

/// Per-worker-count wall times, plus a histogram of per-frame durations for
/// the largest worker count.
pub struct ParallelReport {
    pub scaling_csv: String,
    pub histogram_csv: String,
}

/// Equal-width histogram of `values` as `(lo, hi, count)` rows.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

pub fn parallel_scaling(vre: &Path, size: ClipSize, workers: &[usize], bins: usize) -> Result<ParallelReport> {
    let dir = tempfile::tempdir()?;
    let video = dir.path().join("clip.vraw");
    write_raw_video(&video, &size.clip())?;
    let config_path = dir.path().join("config.yaml");
    let config = Config {
        globals: GlobalConfig::default(),
        representations: default_specs(),
    };
    std::fs::write(&config_path, vre_core::config::serialize_config(&config))?;
    let mut scaling_csv = String::from("workers,frames,wall_s,speedup\n");
    let mut base = None;
    let mut last_out = None;
    for &n in workers {
        let out: PathBuf = dir.path().join(format!("out{n}"));
        let plan = WorkerPlan::new(
            vre,
            &ParallelJob {
                video: video.clone(),
                config: config_path.clone(),
                output: out.clone(),
                frames: FrameRange::new(0, size.frames)?,
                workers: n,
                devices: Vec::new(),
                extra_args: Vec::new(),
            },
        )?;
        let summary = run_parallel(&plan, &out)?;
        ensure!(summary.exit_code() == 0, "parallel run with {n} workers exited {}", summary.exit_code());
        let base_wall = *base.get_or_insert(summary.wall_s);
        writeln!(scaling_csv, "{n},{},{:.6},{:.3}", size.frames, summary.wall_s, base_wall / summary.wall_s)?;
        last_out = Some(out);
    }
    let mut histogram_csv = String::from("representation,bin_lo_s,bin_hi_s,count\n");
    if let Some(out) = last_out {
        let store = ExportStore::open(&out);
        for name in store.representations()? {
            let durations: Vec<f64> = store.load_metadata(&name)?.frames.iter().filter_map(|r| r.duration_s).collect();
            for (lo, hi, count) in histogram(&durations, bins) {
                writeln!(histogram_csv, "{name},{lo:.6},{hi:.6},{count}")?;
            }
        }
    }
    Ok(ParallelReport {
        scaling_csv,
        histogram_csv,
    })
}

/// A reader that releases frames of a prepared stream at a fixed rate.
struct PacedSource {
    data: Vec<u8>,
    pos: usize,
    header_len: usize,
    frame_len: usize,
    interval: Duration,
    start: Instant,
}

impl Read for PacedSource {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        if self.pos >= self.data.len() {
            return Ok(0);
        }
        if self.pos >= self.header_len {
            let frame = (self.pos - self.header_len) / self.frame_len;
            let due = self.start + self.interval * frame as u32;
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        let limit = if self.pos < self.header_len {
            self.header_len
        } else {
            let into = (self.pos - self.header_len) % self.frame_len;
            self.pos + self.frame_len - into
        };
        let n = buf.len().min(limit - self.pos);
        buf[..n].copy_from_slice(&self.data[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Achieved frame rate of each terminal representation against a paced
/// source, with the default latest-wins policy.
pub fn streaming_fps(size: ClipSize, source_fps: f64, terminals: &[&str]) -> Result<String> {
    let clip = size.clip();
    let registry = Registry::builtin();
    let graph = build_graph(&default_specs())?;
    let mut input = Vec::new();
    StreamHeader::rgb(size.width, size.height).write_to(&mut input)?;
    let header_len = input.len();
    for frame in clip.axis_iter(Axis(0)) {
        input.extend(frame.iter());
    }
    let mut csv = String::from("terminal,source_fps,received,processed,dropped,wall_s,output_fps\n");
    for &terminal in terminals {
        let mut pipeline = StreamPipeline::new(&graph, &GlobalConfig::default(), terminal, &registry, "cpu")
            .with_context(|| format!("building the '{terminal}' pipeline"))?;
        let source = PacedSource {
            data: input.clone(),
            pos: 0,
            header_len,
            frame_len: size.height * size.width * 3,
            interval: Duration::from_secs_f64(1.0 / source_fps),
            start: Instant::now(),
        };
        let t0 = Instant::now();
        let stats = serve_stream(&mut pipeline, source, std::io::sink(), &StreamOptions::default(), &SystemClock::new(), None)?;
        let wall = t0.elapsed().as_secs_f64();
        writeln!(
            csv,
            "{terminal},{source_fps},{},{},{},{wall:.3},{:.3}",
            stats.received,
            stats.processed,
            stats.dropped,
            stats.processed as f64 / wall
        )?;
    }
    Ok(csv)
}

/// Writes `text` to `path`, or to stdout for `None`.
pub fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(text.as_bytes())?),
    }
}
