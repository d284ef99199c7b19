//! End-to-end acceptance checks for the engine, the streaming mode and the
//! parallel launcher.
//!
//! Prints one `PASS`, `FAIL` or `SKIP` line per criterion and exits nonzero
//! when any criterion fails. Every tolerance lives in a constant below.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vre_core::engine::{Engine, RunOptions};
use vre_core::parallel::{ParallelJob, ParallelRun, WorkerPlan};
use vre_core::streaming::fps::{parse_fps_csv, FpsLog, SystemClock, DEFAULT_WINDOW};
use vre_core::streaming::mailbox::DropPolicy;
use vre_core::streaming::{read_stream, write_stream};
use vre_core::video::{natural_clip, synthetic_clip, write_raw_video, MemoryVideo};
use vre_core::{
    build_graph, parse_config, serve_stream, ArrayData, ChannelSemantics, ExportStore, FrameBatch, ParamValue,
    Registry, ReprOutput, RepresentationSpec, StreamOptions, StreamPipeline,
};

const VRE: &str = env!("CARGO_BIN_EXE_vre");
const STUB: &str = env!("CARGO_BIN_EXE_vre-stub-expert");

/// Wall-clock bound for a skip run over an already exported range.
const REENTRANCY_MAX_S: f64 = 60.0;
/// Hosts with fewer cores cannot show a parallel speedup.
const SCALING_MIN_CORES: usize = 4;
const SCALING_WORKERS: usize = 2;
/// Largest allowed ratio of the parallel wall time to the single-worker one.
const SCALING_MAX_RATIO: f64 = 0.65;
const COMPRESSION_MIN_RATIO: f64 = 1.5;
const NORMALS_MAX_ANGLE_DEG: f64 = 1.0;
const NORMALS_MIN_WITHIN: f64 = 0.99;
const FRONTO_PARALLEL_TOL: f32 = 1e-5;
const SAFE_LANDING_INSTANCES: usize = 1000;
const SOURCE_FPS: f64 = 30.0;
const SOURCE_FRAMES: usize = 120;
const THROTTLE_FPS: f64 = 2.0;
/// Frames that may arrive between taking a frame and logging its emit.
const STREAM_MAX_BACKLOG: u64 = 3;
/// Relative slack on the throttled rate.
const THROTTLE_SLACK: f64 = 0.1;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Result<Self> {
        Ok(Self {
            dir: tempfile::tempdir()?,
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn file(&self, rel: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        std::fs::write(&p, text)?;
        Ok(p)
    }

    fn clip(&self, rel: &str, frames: &Array4<u8>) -> Result<PathBuf> {
        let p = self.path(rel);
        write_raw_video(&p, frames)?;
        Ok(p)
    }

    fn vre(&self, args: &[&str]) -> Result<Output> {
        Ok(Command::new(VRE).args(args).current_dir(self.dir.path()).output()?)
    }

    /// Runs `vre` and requires the given exit code.
    fn vre_expect(&self, code: i32, args: &[&str]) -> Result<Output> {
        let out = self.vre(args)?;
        ensure!(
            out.status.code() == Some(code),
            "`vre {}` exited with {:?}, expected {code}:\n{}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        Ok(out)
    }
}

/// Relative path -> bytes of every exported data file.
fn data_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let rel = path.strip_prefix(root)?.to_string_lossy().into_owned();
            if rel.starts_with(".logs") || rel.ends_with(".json") || rel.ends_with(".lock") {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                out.insert(rel, std::fs::read(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

fn same_tree(a: &Path, b: &Path) -> Result<usize> {
    let (ta, tb) = (data_tree(a)?, data_tree(b)?);
    let only: Vec<_> = ta.keys().filter(|k| !tb.contains_key(*k)).chain(tb.keys().filter(|k| !ta.contains_key(*k))).collect();
    ensure!(only.is_empty(), "files present on one side only: {:?}", &only[..only.len().min(5)]);
    if let Some(k) = ta.keys().find(|k| ta[*k] != tb[*k]) {
        bail!("{k} differs");
    }
    Ok(ta.len())
}

fn dir_bytes(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for e in std::fs::read_dir(dir)? {
        total += e?.metadata()?.len();
    }
    Ok(total)
}

const COLOR_EDGES: &str = "globals: {batch_size: 8}
representations:
  rgb: {type: color/rgb}
  hsv: {type: color/hsv}
  edges: {type: edges/canny, deps: [rgb]}
";

fn reentrancy() -> Result<String> {
    let ws = Workspace::new()?;
    ws.clip("clip.vraw", &natural_clip(60, 90, 160))?;
    ws.file("c.yaml", COLOR_EDGES)?;
    let base = ["clip.vraw", "--config_path", "c.yaml", "-o", "out", "--frames", "0..60"];
    ws.vre_expect(0, &[&["run"][..], &base, &["--run_id", "first"]].concat())?;
    let t0 = Instant::now();
    ws.vre_expect(0, &[&["run"][..], &base, &["--skip_computed", "--run_id", "again"]].concat())?;
    let wall = t0.elapsed().as_secs_f64();
    let meta = ExportStore::open(ws.path("out")).read_run_metadata("again")?;
    let calls = meta.total_compute_calls();
    let skipped: usize = meta.representations.values().map(|s| s.skipped).sum();
    ensure!(calls == 0, "skip run made {calls} compute calls");
    ensure!(skipped == 180, "skip run skipped {skipped} frames, expected 180");
    ensure!(wall < REENTRANCY_MAX_S, "skip run took {wall:.1}s");
    Ok(format!("0 compute calls, 180 frames skipped, {wall:.2}s"))
}

const PARALLEL_CONFIG: &str = "globals: {batch_size: 8}
representations:
  rgb: {type: color/rgb}
  hsv: {type: color/hsv}
  edges: {type: edges/canny, deps: [rgb]}
  depth: {type: depth/stub}
  normals: {type: normals/svd, deps: [depth]}
";

fn parallel_equivalence() -> Result<String> {
    let ws = Workspace::new()?;
    ws.clip("clip.vraw", &natural_clip(60, 60, 96))?;
    ws.file("p.yaml", PARALLEL_CONFIG)?;
    for (workers, out) in [("1", "one"), ("3", "three")] {
        ws.vre_expect(
            0,
            &["parallel", "clip.vraw", "--config_path", "p.yaml", "-o", out, "--frames", "0..60", "--workers", workers],
        )?;
    }
    let files = same_tree(&ws.path("one"), &ws.path("three"))?;
    let store = ExportStore::open(ws.path("three"));
    for name in ["rgb", "hsv", "edges", "depth", "normals"] {
        let meta = store.load_metadata(name)?;
        ensure!(meta.frames.len() == 60, "{name}: {} records", meta.frames.len());
        let ok: Vec<usize> = meta.ok_frames().collect();
        ensure!(ok == (0..60).collect::<Vec<_>>(), "{name}: {} frames ok", ok.len());
    }
    Ok(format!("{files} files bit-identical, 60 records per representation"))
}

/// `None` when the host is too small to measure.
fn parallel_scaling() -> Result<Option<String>> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < SCALING_MIN_CORES {
        return Ok(None);
    }
    let ws = Workspace::new()?;
    ws.clip("clip.vraw", &natural_clip(80, 180, 320))?;
    ws.file("n.yaml", "representations:\n  depth: {type: depth/stub}\n  normals: {type: normals/svd, deps: [depth]}\n")?;
    let mut walls = Vec::new();
    for (workers, out) in [("1".to_string(), "one"), (SCALING_WORKERS.to_string(), "many")] {
        let t0 = Instant::now();
        ws.vre_expect(0, &["parallel", "clip.vraw", "--config_path", "n.yaml", "-o", out, "--workers", &workers])?;
        walls.push(t0.elapsed().as_secs_f64());
    }
    let ratio = walls[1] / walls[0];
    ensure!(
        ratio <= SCALING_MAX_RATIO,
        "{SCALING_WORKERS} workers took {ratio:.2}x the single-worker time ({:.2}s vs {:.2}s)",
        walls[1],
        walls[0]
    );
    Ok(Some(format!("{SCALING_WORKERS} workers took {ratio:.2}x the single-worker time on {cores} cores")))
}

fn all_builtins_config(batch_size: usize) -> String {
    format!(
        "globals: {{batch_size: {batch_size}}}
representations:
  rgb: {{type: color/rgb}}
  hsv: {{type: color/hsv}}
  edges: {{type: edges/canny, deps: [rgb]}}
  depth: {{type: depth/stub}}
  normals: {{type: normals/svd, deps: [depth]}}
  sem: {{type: semantic/stub}}
  coarse: {{type: semantic/mapping, deps: [sem], params: {{mapping: [0, 1, 1, 2, 2, 3, 3, 0]}}}}
  safe: {{type: binary/threshold, deps: [normals, depth, sem], params: {{safe_classes: [0, 2, 5]}}}}
  expert: {{type: expert/subprocess, params: {{command: [\"{STUB}\", \"echo\"]}}}}
"
    )
}

fn batch_size_equivalence() -> Result<String> {
    let ws = Workspace::new()?;
    ws.clip("clip.vraw", &natural_clip(40, 48, 64))?;
    for bs in [1, 20] {
        ws.file(&format!("b{bs}.yaml"), &all_builtins_config(bs))?;
        ws.vre_expect(0, &["run", "clip.vraw", "--config_path", &format!("b{bs}.yaml"), "-o", &format!("out{bs}")])?;
    }
    let files = same_tree(&ws.path("out1"), &ws.path("out20"))?;
    ensure!(files == 9 * 40, "expected 360 exported files, found {files}");
    Ok(format!("{files} files bit-identical for batch sizes 1 and 20"))
}

fn compression() -> Result<String> {
    let ws = Workspace::new()?;
    ws.clip("clip.vraw", &natural_clip(6, 540, 960))?;
    ws.file("h.yaml", "representations:\n  hsv: {type: color/hsv}\n")?;
    let mut runs = Vec::new();
    for (flag, out) in [("--no-compress", "plain"), ("--compress", "packed")] {
        ws.vre_expect(0, &["run", "clip.vraw", "--config_path", "h.yaml", "-o", out, flag, "--run_id", out])?;
        let store = ExportStore::open(ws.path(out));
        let meta = store.read_run_metadata(out)?;
        let secs = meta.representations["hsv"].duration_s;
        runs.push((store, dir_bytes(&ws.path(out).join("hsv/npz"))?, secs));
    }
    let registry = Registry::builtin();
    let hsv = registry.create(&RepresentationSpec::new("hsv", "color/hsv", &[]))?;
    for i in 0..6 {
        let a = runs[0].0.read_frame(hsv.as_ref(), "hsv", i)?;
        let b = runs[1].0.read_frame(hsv.as_ref(), "hsv", i)?;
        ensure!(a == b, "frame {i} decodes differently");
    }
    let ratio = runs[0].1 as f64 / runs[1].1 as f64;
    let time_ratio = runs[1].2 / runs[0].2;
    ensure!(ratio >= COMPRESSION_MIN_RATIO, "only {ratio:.2}x smaller");
    ensure!(time_ratio > 1.0, "compressed export was not slower ({time_ratio:.2}x)");
    Ok(format!(
        "{ratio:.2}x smaller ({} vs {} bytes), decodes equal, {time_ratio:.2}x export time",
        runs[0].1, runs[1].1
    ))
}

fn depth_output(depth: Array3<f32>) -> ReprOutput {
    let (h, w, _) = depth.dim();
    let data = depth.into_shape_with_order((1, h, w, 1)).expect("shape");
    ReprOutput::new(ArrayData::F32(data), ChannelSemantics::Depth)
}

fn encoded_normals(depth: Array3<f32>) -> Result<Array4<f32>> {
    let (h, w, _) = depth.dim();
    let mut normals = Registry::builtin().create(&RepresentationSpec::new("normals", "normals/svd", &["depth"]))?;
    let batch = FrameBatch::new(vec![0], Array4::zeros((1, h, w, 3)));
    match normals.compute(&batch, &[&depth_output(depth)])?.data {
        ArrayData::F32(a) => Ok(a),
        _ => bail!("normals are not f32"),
    }
}

fn normals_oracle() -> Result<String> {
    let (h, w) = (64usize, 96usize);
    let f = (w as f64 / 2.0) / (75f64.to_radians() / 2.0).tan();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    // Plane a X + b Y + c Z = 1; along the ray through (x, y), Z solves it.
    let (a, b, c): (f64, f64, f64) = (0.3, -0.4, 1.0);
    let depth = Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
        (1.0 / (a * (x as f64 - cx) / f + b * (y as f64 - cy) / f + c)) as f32
    });
    let norm = (a * a + b * b + c * c).sqrt();
    let expected = [a / norm, b / norm, c / norm];
    let enc = encoded_normals(depth)?;
    let r = 2;
    let (mut within, mut total, mut worst) = (0usize, 0usize, 0f64);
    for y in r..h - r {
        for x in r..w - r {
            let n: Vec<f64> = (0..3).map(|k| 2.0 * enc[(0, y, x, k)] as f64 - 1.0).collect();
            let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cos = n.iter().zip(expected).map(|(p, q)| p * q).sum::<f64>() / len;
            let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
            worst = worst.max(angle);
            total += 1;
            within += usize::from(angle <= NORMALS_MAX_ANGLE_DEG);
        }
    }
    let share = within as f64 / total as f64;
    ensure!(share >= NORMALS_MIN_WITHIN, "{:.2}% of interior pixels within 1 degree", share * 100.0);

    let flat = encoded_normals(Array3::from_elem((h, w, 1), 0.5f32))?;
    for (k, want) in [0.5f32, 0.5, 1.0].into_iter().enumerate() {
        let err = flat.index_axis(ndarray::Axis(3), k).iter().map(|v| (v - want).abs()).fold(0.0, f32::max);
        ensure!(err <= FRONTO_PARALLEL_TOL, "fronto-parallel channel {k} off by {err}");
    }
    Ok(format!(
        "slanted plane {:.2}% within 1 deg (worst {worst:.3} deg), fronto-parallel exact to 1e-5",
        share * 100.0
    ))
}

/// Encoded normal components drawn from the uniform range or pinned at the
/// rule's boundaries.
fn sample_unit(rng: &mut ChaCha8Rng, boundaries: &[f32]) -> f32 {
    if rng.gen_bool(0.25) {
        boundaries[rng.gen_range(0..boundaries.len())]
    } else {
        rng.gen_range(0.0..=1.0)
    }
}

fn safe_landing_reference(v: [f32; 3], depth: f32, class: u8, safe: &[usize]) -> u8 {
    let (v1, v2, v3) = (v[0] as f64, v[1] as f64, v[2] as f64);
    u8::from(v2 > 0.8 && v1 + v3 < 1.2 && depth as f64 <= 0.9 && safe.contains(&(class as usize)))
}

fn safe_landing() -> Result<String> {
    let registry = Registry::builtin();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe);
    let (h, w) = (16, 16);
    let mut ones = 0usize;
    for instance in 0..SAFE_LANDING_INSTANCES {
        let safe: Vec<usize> = (0..8).filter(|_| rng.gen_bool(0.5)).collect();
        let spec = RepresentationSpec::new("safe", "binary/threshold", &["normals", "depth", "sem"]).with_param(
            "safe_classes",
            ParamValue::List(safe.iter().map(|&c| ParamValue::Int(c as i64)).collect()),
        );
        let mut mask = registry.create(&spec)?;
        let normals = Array4::from_shape_fn((1, h, w, 3), |(_, _, _, k)| {
            sample_unit(&mut rng, if k == 1 { &[0.8, 0.79, 0.81] } else { &[0.6, 0.4, 0.2] })
        });
        let depth = Array4::from_shape_fn((1, h, w, 1), |_| sample_unit(&mut rng, &[0.9, 0.89, 0.91]));
        let classes = Array4::from_shape_fn((1, h, w, 1), |_| rng.gen_range(0..8u8));
        let batch = FrameBatch::new(vec![0], Array4::zeros((1, h, w, 3)));
        let deps = [
            ReprOutput::new(ArrayData::F32(normals.clone()), ChannelSemantics::Normals),
            ReprOutput::new(ArrayData::F32(depth.clone()), ChannelSemantics::Depth),
            ReprOutput::new(ArrayData::U8(classes.clone()), ChannelSemantics::ClassIndex { classes: 8 }),
        ];
        let out = mask.compute(&batch, &[&deps[0], &deps[1], &deps[2]])?;
        let ArrayData::U8(got) = out.data else {
            bail!("mask is not u8");
        };
        for y in 0..h {
            for x in 0..w {
                let v = [normals[(0, y, x, 0)], normals[(0, y, x, 1)], normals[(0, y, x, 2)]];
                let want = safe_landing_reference(v, depth[(0, y, x, 0)], classes[(0, y, x, 0)], &safe);
                ensure!(
                    got[(0, y, x, 0)] == want,
                    "instance {instance} pixel ({y}, {x}): got {}, expected {want}",
                    got[(0, y, x, 0)]
                );
                ones += usize::from(want);
            }
        }
    }
    let pixels = SAFE_LANDING_INSTANCES * h * w;
    Ok(format!("{SAFE_LANDING_INSTANCES} instances, {pixels} pixels exact ({ones} safe)"))
}

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().expect("buffer lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

const STREAM_CONFIG: &str = "representations:
  rgb: {type: color/rgb}
  edges: {type: edges/canny, deps: [rgb]}
";

fn pipeline(terminal: &str) -> Result<StreamPipeline> {
    let registry = Registry::builtin();
    let cfg = parse_config(STREAM_CONFIG, &registry)?;
    let graph = build_graph(&cfg.representations)?;
    Ok(StreamPipeline::new(&graph, &cfg.globals, terminal, &registry, "cpu")?)
}

fn frame(frames: &Array4<u8>, i: usize) -> Array3<u8> {
    frames.index_axis(ndarray::Axis(0), i).to_owned()
}

/// A paced 30 fps source against a 2 fps consumer.
fn streaming_throttled() -> Result<String> {
    let clip = synthetic_clip(SOURCE_FRAMES, 48, 64);
    let (reader, mut writer) = std::io::pipe()?;
    let source = {
        let clip = clip.clone();
        std::thread::spawn(move || -> std::io::Result<()> {
            let (_, h, w, _) = clip.dim();
            vre_core::streaming::header::StreamHeader::rgb(w, h).write_to(&mut writer)?;
            let t0 = Instant::now();
            for i in 0..clip.dim().0 {
                let due = t0 + Duration::from_secs_f64(i as f64 / SOURCE_FPS);
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
                writer.write_all(frame(&clip, i).as_slice().expect("contiguous"))?;
            }
            Ok(())
        })
    };
    let csv = SharedBuf::default();
    let mut log = FpsLog::new(Box::new(csv.clone()) as Box<dyn Write + Send>, DEFAULT_WINDOW)?;
    let mut output = Vec::new();
    let opts = StreamOptions {
        max_fps: Some(THROTTLE_FPS),
        ..StreamOptions::default()
    };
    let t0 = Instant::now();
    let stats = serve_stream(&mut pipeline("edges")?, reader, &mut output, &opts, &SystemClock::new(), Some(&mut log))?;
    let elapsed = t0.elapsed().as_secs_f64();
    source.join().map_err(|_| anyhow!("source thread panicked"))??;

    ensure!(stats.received == SOURCE_FRAMES as u64, "received {} frames", stats.received);
    ensure!(stats.emitted.windows(2).all(|p| p[0] < p[1]), "emitted indices not increasing: {:?}", stats.emitted);
    let budget = THROTTLE_FPS * elapsed * (1.0 + THROTTLE_SLACK) + 1.0;
    ensure!(
        (stats.processed as f64) <= budget,
        "{} frames processed in {elapsed:.2}s exceeds the throttle",
        stats.processed
    );

    let (_, frames) = read_stream(&mut output.as_slice())?;
    ensure!(frames.len() as u64 == stats.processed, "{} frames written", frames.len());
    let mut reference = pipeline("edges")?;
    for (out, &seq) in frames.iter().zip(&stats.emitted) {
        let want = reference.process(seq as usize, frame(&clip, seq as usize))?;
        ensure!(*out == want, "output for input frame {seq} differs from the chain");
    }

    let text = String::from_utf8(csv.0.lock().expect("buffer lock").clone())?;
    let records = parse_fps_csv(&text).ok_or_else(|| anyhow!("unparseable fps csv"))?;
    ensure!(records.len() as u64 == stats.processed, "{} csv records", records.len());
    let backlog = records.iter().map(|r| r.received - r.frame_index).max().unwrap_or(0);
    ensure!(backlog <= STREAM_MAX_BACKLOG, "a processed frame was {backlog} frames behind the source");
    let last = records.last().ok_or_else(|| anyhow!("no csv records"))?;
    ensure!(last.received > last.processed, "csv shows no drops: {last:?}");
    Ok(format!(
        "{} of {} frames processed in {elapsed:.1}s, max backlog {backlog}, {} dropped",
        stats.processed,
        stats.received,
        last.dropped()
    ))
}

/// Lossless streaming output equals the image of the batch export.
fn streaming_matches_batch() -> Result<String> {
    let clip = natural_clip(10, 48, 64);
    let dir = tempfile::tempdir()?;
    let registry = Registry::builtin();
    let cfg = parse_config(STREAM_CONFIG, &registry)?;
    let mut engine = Engine::new(&cfg, &registry, ExportStore::create(dir.path())?)?;
    let meta = engine.run(&mut MemoryVideo::new(clip.clone()), &RunOptions::default())?;
    ensure!(meta.total_failed() == 0, "batch export failed frames");
    let store = ExportStore::open(dir.path());
    let mut input = Vec::new();
    write_stream(&mut input, &clip)?;
    for terminal in ["rgb", "edges"] {
        let opts = StreamOptions {
            policy: DropPolicy::Block,
            ..StreamOptions::default()
        };
        let mut output = Vec::new();
        serve_stream(&mut pipeline(terminal)?, std::io::Cursor::new(input.clone()), &mut output, &opts, &SystemClock::new(), None)?;
        let (_, frames) = read_stream(&mut output.as_slice())?;
        ensure!(frames.len() == 10, "{terminal}: {} frames streamed", frames.len());
        let spec = cfg.spec(terminal).expect("configured");
        let inst = registry.create(spec)?;
        for (i, got) in frames.iter().enumerate() {
            let want = inst.make_image(&store.read_frame(inst.as_ref(), terminal, i)?)?;
            ensure!(*got == want, "{terminal} frame {i} differs from the batch export");
        }
    }
    Ok("rgb and edges bit-identical over 10 frames".into())
}

fn resource_retry() -> Result<String> {
    let ws = Workspace::new()?;
    ws.clip("clip.vraw", &synthetic_clip(20, 24, 32))?;
    ws.file(
        "r.yaml",
        &format!(
            "globals: {{batch_size: 20}}\nrepresentations:\n  ex: {{type: expert/subprocess, params: {{command: [\"{STUB}\", \"fail-above\", \"3\"]}}}}\n"
        ),
    )?;
    ws.vre_expect(0, &["run", "clip.vraw", "--config_path", "r.yaml", "-o", "out", "--run_id", "retry"])?;
    let store = ExportStore::open(ws.path("out"));
    let meta = store.read_run_metadata("retry")?;
    let stats = &meta.representations["ex"];
    ensure!(stats.computed == 20 && stats.failed == 0, "{} computed, {} failed", stats.computed, stats.failed);
    ensure!(stats.batch_size_changes == [10, 5, 2], "batch sizes went {:?}", stats.batch_size_changes);
    let log = std::fs::read_to_string(store.log_path("retry"))?;
    let mut rest = log.as_str();
    for size in [10, 5, 2] {
        let needle = format!("retrying with batch size {size}\n");
        let at = rest.find(&needle).with_context(|| format!("log lacks '{}' in order", needle.trim()))?;
        rest = &rest[at + needle.len()..];
    }
    let ok = store.load_metadata("ex")?.ok_frames().count();
    ensure!(ok == 20, "{ok} frames recorded");
    Ok("20 -> 10 -> 5 -> 2, all 20 frames computed".into())
}

const CRASH_CONFIG: &str = "globals: {batch_size: 1}
representations:
  rgb: {type: color/rgb}
  depth: {type: depth/stub}
  normals: {type: normals/svd, deps: [depth]}
";

fn crash_recovery() -> Result<String> {
    let ws = Workspace::new()?;
    let video = ws.clip("clip.vraw", &natural_clip(40, 120, 160))?;
    let config = ws.file("k.yaml", CRASH_CONFIG)?;
    let out = ws.path("out");
    let plan = WorkerPlan::new(
        Path::new(VRE),
        &ParallelJob {
            video: video.clone(),
            config: config.clone(),
            output: out.clone(),
            frames: "0..40".parse()?,
            workers: 2,
            devices: Vec::new(),
            extra_args: Vec::new(),
        },
    )?;
    let victim = plan.workers[1].frames;
    let mut run = ParallelRun::spawn(&plan, &out)?;
    let store = ExportStore::open(&out);
    let deadline = Instant::now() + Duration::from_secs(120);
    loop {
        let done = store
            .load_metadata("normals")
            .map(|m| m.ok_frames().filter(|i| victim.contains(*i)).count())
            .unwrap_or(0);
        if done >= 2 {
            break;
        }
        ensure!(Instant::now() < deadline, "worker 1 never reached normals");
        std::thread::sleep(Duration::from_millis(5));
    }
    run.kill(1)?;
    let summary = run.wait()?;
    let killed = &summary.workers[1];
    ensure!(killed.exit_code.is_none(), "worker 1 finished before it was killed");
    ensure!(summary.workers[0].exit_code == Some(0), "worker 0 exited with {:?}", summary.workers[0].exit_code);

    let names = ["rgb", "depth", "normals"];
    let mut missing = BTreeMap::new();
    for name in names {
        missing.insert(name, 40 - store.load_metadata(name)?.ok_frames().count());
    }
    ensure!(missing["normals"] > 0, "no normals frames were lost");
    let args = ["run", "clip.vraw", "--config_path", "k.yaml", "--frames", "0..40"];
    ws.vre_expect(0, &[&args[..], &["-o", "out", "--skip_computed", "--run_id", "resume"]].concat())?;
    let resume = store.read_run_metadata("resume")?;
    for name in names {
        let s = &resume.representations[name];
        ensure!(
            s.computed == missing[name] && s.failed == 0,
            "{name}: resume computed {} frames, {} were missing",
            s.computed,
            missing[name]
        );
    }
    ws.vre_expect(0, &[&args[..], &["-o", "whole"]].concat())?;
    let files = same_tree(&out, &ws.path("whole"))?;
    let recomputed: usize = missing.values().sum();
    Ok(format!(
        "killed worker 1, resume recomputed exactly the {recomputed} missing frames, {files} files equal an uninterrupted run"
    ))
}

fn main() -> ExitCode {
    // Keep worker chatter out of the report; children inherit this.
    std::env::set_var("RUST_LOG", "warn");
    type Check = fn() -> Result<String>;
    let checks: [(&str, Check); 9] = [
        ("re-entrancy", reentrancy),
        ("parallel-equivalence", parallel_equivalence),
        ("batch-size-equivalence", batch_size_equivalence),
        ("compression", compression),
        ("normals-oracle", normals_oracle),
        ("safe-landing-mask", safe_landing),
        ("streaming-throttle", streaming_throttled),
        ("streaming-batch-equality", streaming_matches_batch),
        ("resource-retry", resource_retry),
    ];
    let mut failed = 0;
    let mut report = |name: &str, result: Result<Option<String>>, t: Instant| {
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(Some(detail)) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Ok(None) => println!(
                "SKIP {name}: host has {} core(s), the measurement needs {SCALING_MIN_CORES}",
                std::thread::available_parallelism().map_or(1, |n| n.get())
            ),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e:#} [{secs:.1}s]");
            }
        }
    };
    for (name, check) in checks {
        let t = Instant::now();
        report(name, check().map(Some), t);
    }
    let t = Instant::now();
    report("parallel-scaling", parallel_scaling(), t);
    let t = Instant::now();
    report("crash-recovery", crash_recovery().map(Some), t);
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
