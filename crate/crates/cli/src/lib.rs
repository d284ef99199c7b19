//! The `vre` command line: batch export, multi-worker export, streaming and
//! export-directory utilities.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vre_core::config::parse_config;
use vre_core::engine::{Engine, FrameRange, RunOptions, DEFAULT_CACHE_BYTES};
use vre_core::graph::{build_graph, partition_groups};
use vre_core::inspect::inspect;
use vre_core::parallel::{ParallelJob, ParallelRun, WorkerPlan, ENV_DEVICES};
use vre_core::representation::Registry;
use vre_core::storage::ExportStore;
use vre_core::streaming::fps::{FpsLog, DEFAULT_WINDOW};
use vre_core::streaming::{serve_stream, DropPolicy, StreamEndpoint, StreamOptions, StreamPipeline, SystemClock};
use vre_core::video::{natural_clip, open_video, synthetic_clip, write_raw_video, Resized};
use vre_core::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_FRAMES_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vre", version, about = "Compute and export video representations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Export representations of a video to an output directory.
    Run(RunArgs),
    /// Split a frame range across worker processes sharing one output directory.
    Parallel(ParallelArgs),
    /// Process a raw frame stream with one representation, writing nothing to disk.
    Stream(StreamArgs),
    /// Rebuild representation metadata from the data files on disk.
    #[command(name = "regen-metadata")]
    RegenMetadata(RegenArgs),
    /// Summarize the runs and representations of an output directory.
    Inspect(InspectArgs),
    /// Write a synthetic test clip as a `.vraw` file.
    #[command(name = "make-clip")]
    MakeClip(MakeClipArgs),
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Replaces the configured global batch size.
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    /// Only compute frames without a successful record.
    #[arg(long = "skip_computed")]
    pub skip_computed: bool,
    /// Compress every binary export.
    #[arg(long, conflicts_with = "no_compress")]
    pub compress: bool,
    /// Store every binary export uncompressed.
    #[arg(long = "no-compress")]
    pub no_compress: bool,
    /// Also export JPEG images for every representation.
    #[arg(long = "export-images")]
    pub export_images: bool,
}

impl ExportArgs {
    fn compression(&self) -> Option<bool> {
        match (self.compress, self.no_compress) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        }
    }

    fn passthrough(&self) -> Vec<OsString> {
        let mut v: Vec<OsString> = Vec::new();
        if let Some(b) = self.batch_size {
            v.extend(["--batch_size".into(), b.to_string().into()]);
        }
        if self.skip_computed {
            v.push("--skip_computed".into());
        }
        if self.compress {
            v.push("--compress".into());
        }
        if self.no_compress {
            v.push("--no-compress".into());
        }
        if self.export_images {
            v.push("--export-images".into());
        }
        v
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// A `.vraw` file, a directory of numbered images, or any file ffmpeg reads.
    pub video: PathBuf,
    #[arg(long = "config_path")]
    pub config_path: PathBuf,
    #[arg(short = 'o', long = "output_path")]
    pub output: PathBuf,
    /// Frames `A..B` (end exclusive). Default: the whole video.
    #[arg(long)]
    pub frames: Option<FrameRange>,
    #[command(flatten)]
    pub export: ExportArgs,
    /// Write images for already computed frames that lack them (with --skip_computed).
    #[arg(long = "rerun-images")]
    pub rerun_images: bool,
    /// Device label for learned representations. Default: the first label in $VRE_DEVICES, else `cpu`.
    #[arg(long)]
    pub device: Option<String>,
    #[arg(long = "run_id")]
    pub run_id: Option<String>,
    /// Group assignment `name=group,...`; every representation needs one.
    #[arg(long, requires = "group")]
    pub assign: Option<String>,
    /// Run only this group of the assignment. Dependencies in other groups are read from disk.
    #[arg(long, requires = "assign")]
    pub group: Option<String>,
    /// Memory budget for dependency outputs kept between representations.
    #[arg(long = "cache-mb", default_value_t = DEFAULT_CACHE_BYTES >> 20)]
    pub cache_mb: usize,
}

#[derive(Debug, Args)]
pub struct ParallelArgs {
    pub video: PathBuf,
    #[arg(long = "config_path")]
    pub config_path: PathBuf,
    #[arg(short = 'o', long = "output_path")]
    pub output: PathBuf,
    #[arg(long)]
    pub frames: Option<FrameRange>,
    #[arg(long, default_value_t = 2)]
    pub workers: usize,
    /// Comma-separated device labels, assigned to workers round-robin.
    #[arg(long, value_delimiter = ',')]
    pub devices: Vec<String>,
    #[command(flatten)]
    pub export: ExportArgs,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[arg(long = "config_path")]
    pub config_path: PathBuf,
    /// The representation to render.
    #[arg(long)]
    pub repr: String,
    /// Accept one TCP connection on this address instead of using stdin/stdout.
    #[arg(long, conflicts_with = "connect")]
    pub listen: Option<String>,
    /// Connect to this TCP address instead of using stdin/stdout.
    #[arg(long)]
    pub connect: Option<String>,
    /// Only offer every Nth received frame for processing.
    #[arg(long, default_value_t = 1)]
    pub stride: u64,
    /// Cap on the processing rate.
    #[arg(long = "max-fps")]
    pub max_fps: Option<f64>,
    /// Never drop frames: the reader waits for processing instead.
    #[arg(long)]
    pub lossless: bool,
    /// Write one CSV record per emitted frame.
    #[arg(long = "fps-csv")]
    pub fps_csv: Option<PathBuf>,
    #[arg(long = "fps-window", default_value_t = DEFAULT_WINDOW)]
    pub fps_window: usize,
    #[arg(long)]
    pub device: Option<String>,
}

#[derive(Debug, Args)]
pub struct RegenArgs {
    /// The output directory.
    pub output: PathBuf,
    /// Representations to rebuild. Default: every directory with data files.
    #[arg(long)]
    pub repr: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InspectFormat {
    Table,
    Records,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = InspectFormat::Table)]
    pub format: InspectFormat,
}

#[derive(Debug, Args)]
pub struct MakeClipArgs {
    /// Destination `.vraw` file.
    pub path: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    #[arg(long, default_value_t = 120)]
    pub height: usize,
    #[arg(long, default_value_t = 160)]
    pub width: usize,
    /// Pan across the bundled photo instead of drawing synthetic shapes.
    #[arg(long)]
    pub natural: bool,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn main_with(argv: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FATAL
        }
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .target(env_logger::Target::Stderr)
        .init();
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run(a) => cmd_run(a),
        Command::Parallel(a) => cmd_parallel(a),
        Command::Stream(a) => cmd_stream(a),
        Command::RegenMetadata(a) => cmd_regen(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::MakeClip(a) => cmd_make_clip(a),
    }
}

fn load_config(path: &Path, registry: &Registry) -> Result<Config> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text, registry).with_context(|| format!("config {}", path.display()))
}

fn default_device(flag: Option<String>) -> String {
    flag.or_else(|| {
        std::env::var(ENV_DEVICES)
            .ok()
            .and_then(|v| v.split(',').map(str::trim).find(|s| !s.is_empty()).map(String::from))
    })
    .unwrap_or_else(|| "cpu".into())
}

/// `a=g1,b=g2` as a map.
pub fn parse_assignment(s: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let Some((name, group)) = part.split_once('=') else {
            bail!("assignment '{part}' is not of the form name=group");
        };
        if out.insert(name.trim().to_string(), group.trim().to_string()).is_some() {
            bail!("'{}' is assigned twice", name.trim());
        }
    }
    Ok(out)
}

fn cmd_run(a: RunArgs) -> Result<i32> {
    let registry = Registry::builtin();
    let config = load_config(&a.config_path, &registry)?;
    let store = ExportStore::create(&a.output)?;
    let mut engine = match (&a.assign, &a.group) {
        (Some(assign), Some(group)) => {
            let graph = build_graph(&config.representations)?;
            let groups = partition_groups(&graph, &parse_assignment(assign)?, &config.globals)?;
            let Some((_, sub)) = groups.into_iter().find(|(g, _)| g == group) else {
                bail!("no representation is assigned to group '{group}'");
            };
            Engine::with_graph(sub, config.globals.clone(), &registry, store)?
        }
        _ => Engine::new(&config, &registry, store)?,
    };
    let video = open_video(&a.video).with_context(|| format!("opening {}", a.video.display()))?;
    let mut video = Resized::new(video, config.globals.output_size);
    let opts = RunOptions {
        frames: a.frames,
        batch_size: a.export.batch_size,
        skip_computed: a.export.skip_computed,
        compression: a.export.compression(),
        export_images: a.export.export_images,
        rerun_images: a.rerun_images,
        device: default_device(a.device),
        run_id: a.run_id,
        cache_bytes: a.cache_mb << 20,
    };
    let meta = engine.run(video.as_mut(), &opts)?;
    for (name, s) in &meta.representations {
        println!(
            "{name}: {} computed, {} failed, {} skipped ({:.3}s)",
            s.computed, s.failed, s.skipped, s.duration_s
        );
    }
    println!("run {} done in {:.3}s", meta.run_id, meta.duration_s.unwrap_or_default());
    Ok(if meta.total_failed() > 0 { EXIT_FRAMES_FAILED } else { EXIT_OK })
}

/// The `vre` executable next to the current one (the `vre-parallel` alias
/// lives in the same directory).
fn vre_exe() -> Result<PathBuf> {
    let me = std::env::current_exe().context("locating the current executable")?;
    let sibling = me.with_file_name(format!("vre{}", std::env::consts::EXE_SUFFIX));
    Ok(if sibling.is_file() { sibling } else { me })
}

fn cmd_parallel(a: ParallelArgs) -> Result<i32> {
    let frames = match a.frames {
        Some(f) => f,
        None => {
            let registry = Registry::builtin();
            let config = load_config(&a.config_path, &registry)?;
            let video = Resized::new(open_video(&a.video)?, config.globals.output_size);
            FrameRange::new(0, video.frame_count())?
        }
    };
    ExportStore::create(&a.output)?;
    let job = ParallelJob {
        video: a.video,
        config: a.config_path,
        output: a.output.clone(),
        frames,
        workers: a.workers,
        devices: a.devices,
        extra_args: a.export.passthrough(),
    };
    let plan = WorkerPlan::new(&vre_exe()?, &job)?;
    let summary = ParallelRun::spawn(&plan, &a.output)?.wait()?;
    print!("{summary}");
    for w in summary.incomplete() {
        eprintln!(
            "worker {} did not complete frames {}; rerun with --frames {} --skip_computed",
            w.spec.index, w.spec.frames, w.spec.frames
        );
    }
    Ok(summary.exit_code())
}

fn cmd_stream(a: StreamArgs) -> Result<i32> {
    let registry = Registry::builtin();
    let config = load_config(&a.config_path, &registry)?;
    let graph = build_graph(&config.representations)?;
    let mut pipeline = StreamPipeline::new(&graph, &config.globals, &a.repr, &registry, &default_device(a.device))?;
    let endpoint = match (a.listen, a.connect) {
        (Some(addr), _) => StreamEndpoint::Listen(addr),
        (_, Some(addr)) => StreamEndpoint::Connect(addr),
        _ => StreamEndpoint::Stdio,
    };
    let (input, output) = endpoint.open()?;
    let opts = StreamOptions {
        stride: a.stride,
        max_fps: a.max_fps,
        policy: if a.lossless { DropPolicy::Block } else { DropPolicy::LatestWins },
    };
    let mut fps_log = match &a.fps_csv {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let sink: Box<dyn Write + Send> = Box::new(std::io::BufWriter::new(file));
            Some(FpsLog::new(sink, a.fps_window)?)
        }
        None => None,
    };
    let stats = serve_stream(&mut pipeline, input, output, &opts, &SystemClock::new(), fps_log.as_mut())?;
    log::info!(
        "stream ended: {} received, {} processed, {} dropped",
        stats.received,
        stats.processed,
        stats.dropped
    );
    Ok(EXIT_OK)
}

fn data_dirs(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        if !name.starts_with('.') && (path.join("npz").is_dir() || path.join("jpg").is_dir()) {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_regen(a: RegenArgs) -> Result<i32> {
    let store = ExportStore::create(&a.output)?;
    let names = if a.repr.is_empty() { data_dirs(&a.output)? } else { a.repr };
    if names.is_empty() {
        println!("no representation directories in {}", a.output.display());
    }
    let mut skipped_any = false;
    for name in names {
        let (meta, skipped) = store.regenerate_metadata(&name)?;
        println!("{name}: {} frames recorded", meta.frames.len());
        for (path, why) in skipped {
            skipped_any = true;
            eprintln!("  skipped {}: {why}", path.display());
        }
    }
    Ok(if skipped_any { EXIT_FRAMES_FAILED } else { EXIT_OK })
}

fn cmd_inspect(a: InspectArgs) -> Result<i32> {
    let ins = inspect(&ExportStore::open(&a.output))?;
    match a.format {
        InspectFormat::Table => print!("{}", ins.to_table()),
        InspectFormat::Records => print!("{}", ins.to_records()),
    }
    Ok(EXIT_OK)
}

fn cmd_make_clip(a: MakeClipArgs) -> Result<i32> {
    if a.frames == 0 || a.height == 0 || a.width == 0 {
        bail!("frames, height and width must be positive");
    }
    let clip = if a.natural {
        natural_clip(a.frames, a.height, a.width)
    } else {
        synthetic_clip(a.frames, a.height, a.width)
    };
    write_raw_video(&a.path, &clip)
        .with_context(|| format!("writing {}", a.path.display()))?;
    println!("wrote {} frames of {}x{} to {}", a.frames, a.width, a.height, a.path.display());
    Ok(EXIT_OK)
}
