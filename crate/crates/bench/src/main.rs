//! Runs one experiment and writes its CSV.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use vre_bench::{batch_scaling, emit, export_formats, parallel_scaling, streaming_fps, ClipSize};

#[derive(Parser)]
#[command(name = "vre-bench", about = "Engine experiments emitting CSV")]
struct Cli {
    #[command(subcommand)]
    command: Experiment,
}

#[derive(Args, Clone, Copy)]
struct Clip {
    #[arg(long, default_value_t = 32)]
    frames: usize,
    #[arg(long, default_value_t = 180)]
    height: usize,
    #[arg(long, default_value_t = 320)]
    width: usize,
}

impl From<Clip> for ClipSize {
    fn from(c: Clip) -> Self {
        ClipSize {
            frames: c.frames,
            height: c.height,
            width: c.width,
        }
    }
}

#[derive(Subcommand)]
enum Experiment {
    /// Wall time and disk usage per export layout and compression setting.
    Formats {
        #[command(flatten)]
        clip: Clip,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Throughput against batch size.
    Batch {
        #[command(flatten)]
        clip: Clip,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32")]
        sizes: Vec<usize>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Wall time against worker count, plus a per-representation duration histogram.
    Parallel {
        #[command(flatten)]
        clip: Clip,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// The `vre` executable; defaults to the one next to this binary.
        #[arg(long)]
        vre: Option<PathBuf>,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Achieved output rate per terminal representation against a paced source.
    Stream {
        #[command(flatten)]
        clip: Clip,
        #[arg(long, default_value_t = 30.0)]
        source_fps: f64,
        #[arg(long, value_delimiter = ',', default_value = "rgb,hsv,edges,normals")]
        terminals: Vec<String>,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn sibling_vre() -> Result<PathBuf> {
    let me = std::env::current_exe()?;
    let dir = me.parent().context("executable has no directory")?;
    Ok(dir.join(format!("vre{}", std::env::consts::EXE_SUFFIX)))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Experiment::Formats { clip, batch_size, out } => emit(out.as_deref(), &export_formats(clip.into(), batch_size)?),
        Experiment::Batch { clip, sizes, out } => emit(out.as_deref(), &batch_scaling(clip.into(), &sizes)?),
        Experiment::Parallel {
            clip,
            workers,
            bins,
            vre,
            out,
            histogram,
        } => {
            let vre = match vre {
                Some(p) => p,
                None => sibling_vre()?,
            };
            let report = parallel_scaling(&vre, clip.into(), &workers, bins)?;
            emit(out.as_deref(), &report.scaling_csv)?;
            match histogram {
                Some(p) => emit(Some(&p), &report.histogram_csv),
                None => Ok(eprint!("{}", report.histogram_csv)),
            }
        }
        Experiment::Stream {
            clip,
            source_fps,
            terminals,
            out,
        } => {
            let terminals: Vec<&str> = terminals.iter().map(String::as_str).collect();
            emit(out.as_deref(), &streaming_fps(clip.into(), source_fps, &terminals)?)
        }
    }
}
