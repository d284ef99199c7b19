//! The representation abstraction and its registry.
//!
//! A representation turns a batch of frames (plus the outputs of the
//! representations it depends on) into one array per frame. Built-in kinds
//! live in [`crate::reprs`]; new kinds are added by registering a factory
//! with a [`Registry`]. See `docs/plugins.md`.

mod array;
pub mod colorize;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::{Array3, Array4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use array::{ArrayData, ElementKind};

use crate::config::{ParamError, RepresentationSpec};
use crate::storage::npz::{self, NpzError};

/// What the channels of an output mean. Drives colorization and lets
/// consumers check that they were wired to the right dependencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "semantics")]
pub enum ChannelSemantics {
    /// 8-bit RGB.
    Rgb,
    /// h, s, v each in [0, 1].
    Hsv,
    /// 1 channel, 0 or 255.
    Edges,
    /// 1 channel in [0, 1], larger is farther.
    Depth,
    /// 3 channels, unit normal `n` encoded as `(n + 1) / 2`.
    Normals,
    /// 1 channel of class indices.
    ClassIndex { classes: u32 },
    /// Per-class scores (logits or probabilities), one channel per class.
    ClassScores { classes: u32 },
    /// 1 channel, 0 or 1.
    Mask,
    /// Anything else.
    Raw,
}

impl ChannelSemantics {
    pub fn parse(name: &str, classes: u32) -> Option<Self> {
        Some(match name {
            "rgb" => Self::Rgb,
            "hsv" => Self::Hsv,
            "edges" => Self::Edges,
            "depth" => Self::Depth,
            "normals" => Self::Normals,
            "class_index" => Self::ClassIndex { classes },
            "class_scores" => Self::ClassScores { classes },
            "mask" => Self::Mask,
            "raw" => Self::Raw,
            _ => return None,
        })
    }

    pub fn is_semantic(self) -> bool {
        matches!(self, Self::ClassIndex { .. } | Self::ClassScores { .. })
    }
}

/// Memory-side description of a representation's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSpec {
    pub kind: ElementKind,
    /// `None` when the channel count depends on the input.
    pub channels: Option<usize>,
    pub semantics: ChannelSemantics,
}

impl OutputSpec {
    pub const fn new(kind: ElementKind, channels: usize, semantics: ChannelSemantics) -> Self {
        Self {
            kind,
            channels: Some(channels),
            semantics,
        }
    }
}

/// Per-frame output of a representation, shape `(N, H, W, C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReprOutput {
    pub data: ArrayData,
    pub semantics: ChannelSemantics,
    /// Optional per-frame counters (empty, or one map per frame) that end up
    /// in the representation metadata.
    pub frame_stats: Vec<BTreeMap<String, f64>>,
}

impl ReprOutput {
    pub fn new(data: ArrayData, semantics: ChannelSemantics) -> Self {
        Self {
            data,
            semantics,
            frame_stats: Vec::new(),
        }
    }

    pub fn frames(&self) -> usize {
        self.data.frames()
    }

    pub fn frame(&self, i: usize) -> ReprOutput {
        ReprOutput {
            data: self.data.frame(i),
            semantics: self.semantics,
            frame_stats: self.frame_stats.get(i).cloned().into_iter().collect(),
        }
    }

    /// Concatenates single- or multi-frame outputs along the frame axis.
    pub fn concat(parts: &[ReprOutput]) -> Option<ReprOutput> {
        let first = parts.first()?;
        let data: Vec<ArrayData> = parts.iter().map(|p| p.data.clone()).collect();
        let frame_stats = if parts.iter().all(|p| p.frame_stats.len() == p.frames()) {
            parts.iter().flat_map(|p| p.frame_stats.clone()).collect()
        } else {
            Vec::new()
        };
        Some(ReprOutput {
            data: ArrayData::concat(&data)?,
            semantics: first.semantics,
            frame_stats,
        })
    }

    /// Class indices `(N, H, W, 1)` for semantic outputs; score outputs are argmaxed.
    pub fn class_indices(&self) -> Result<Array4<u8>, ReprError> {
        match (self.semantics, &self.data) {
            (ChannelSemantics::ClassIndex { .. }, ArrayData::U8(a)) if a.dim().3 == 1 => Ok(a.clone()),
            (ChannelSemantics::ClassScores { .. }, data) => Ok(argmax_channels(&data.to_f64())),
            (sem, data) => Err(ReprError::DependencyMismatch(format!(
                "expected class indices, got {sem:?} with {} channels of {:?}",
                data.channels(),
                data.kind()
            ))),
        }
    }
}

/// Index of the largest channel per pixel; the first index wins ties.
pub fn argmax_channels(scores: &Array4<f64>) -> Array4<u8> {
    let (n, h, w, _) = scores.dim();
    let mut out = Array4::<u8>::zeros((n, h, w, 1));
    for ((f, y, x, _), v) in out.indexed_iter_mut() {
        let lane = scores.slice(ndarray::s![f, y, x, ..]);
        let mut best = 0usize;
        for (c, s) in lane.iter().enumerate() {
            if *s > lane[best] {
                best = c;
            }
        }
        *v = best as u8;
    }
    out
}

/// Decoded frames plus their indices in the video. The unit of computation.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBatch {
    pub indices: Vec<usize>,
    /// `(N, H, W, 3)` RGB.
    pub frames: Array4<u8>,
}

impl FrameBatch {
    pub fn new(indices: Vec<usize>, frames: Array4<u8>) -> Self {
        debug_assert_eq!(indices.len(), frames.dim().0);
        Self { indices, frames }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `(height, width)`
    pub fn frame_size(&self) -> (usize, usize) {
        let d = self.frames.dim();
        (d.1, d.2)
    }

    pub fn sub_batch(&self, start: usize, end: usize) -> FrameBatch {
        FrameBatch {
            indices: self.indices[start..end].to_vec(),
            frames: self.frames.slice(ndarray::s![start..end, .., .., ..]).to_owned(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReprError {
    /// Out of memory or similar. The engine retries with a smaller batch.
    #[error("resource exhausted: {0}")]
    ResourceExhausted(String),
    #[error("dependency mismatch: {0}")]
    DependencyMismatch(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("expert failure: {0}")]
    Expert(String),
    #[error("{0}")]
    Codec(#[from] NpzError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ReprError {
    pub fn is_resource_exhausted(&self) -> bool {
        matches!(self, ReprError::ResourceExhausted(_))
    }
}

/// How outputs are encoded on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiskCodec {
    /// Stored as-is; the round trip is bit-exact.
    #[default]
    Identity,
    /// Scores stored as `uint8` argmax class indices.
    ArgmaxU8,
    /// `float64` stored as `float32`.
    TruncateF32,
}

impl DiskCodec {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "identity" => Some(Self::Identity),
            "argmax" | "argmax_u8" => Some(Self::ArgmaxU8),
            "truncate_f32" | "float32" => Some(Self::TruncateF32),
            _ => None,
        }
    }

    pub fn encode(self, out: &ReprOutput) -> Result<ArrayData, ReprError> {
        Ok(match self {
            DiskCodec::Identity => out.data.clone(),
            DiskCodec::ArgmaxU8 => ArrayData::U8(out.class_indices()?),
            DiskCodec::TruncateF32 => match &out.data {
                ArrayData::F64(a) => ArrayData::F32(a.mapv(|v| v as f32)),
                other => other.clone(),
            },
        })
    }

    /// Rebuilds the in-memory form from stored data, checking it against `spec`.
    pub fn decode(self, data: ArrayData, spec: &OutputSpec) -> Result<ReprOutput, ReprError> {
        let mismatch = |expected: &str| {
            ReprError::Codec(NpzError::Format(format!(
                "stored array is {:?} with {} channels, expected {expected}",
                data.kind(),
                data.channels()
            )))
        };
        match self {
            DiskCodec::Identity => {
                if data.kind() != spec.kind || spec.channels.is_some_and(|c| c != data.channels()) {
                    return Err(mismatch(&format!("{:?} x {:?}", spec.kind, spec.channels)));
                }
                Ok(ReprOutput::new(data, spec.semantics))
            }
            DiskCodec::ArgmaxU8 => {
                if data.kind() != ElementKind::U8 || data.channels() != 1 {
                    return Err(mismatch("U8 class indices"));
                }
                let classes = match spec.semantics {
                    ChannelSemantics::ClassScores { classes } | ChannelSemantics::ClassIndex { classes } => classes,
                    _ => 0,
                };
                Ok(ReprOutput::new(data, ChannelSemantics::ClassIndex { classes }))
            }
            DiskCodec::TruncateF32 => {
                if data.kind() != ElementKind::F32 || spec.channels.is_some_and(|c| c != data.channels()) {
                    return Err(mismatch("F32"));
                }
                Ok(ReprOutput::new(data, spec.semantics))
            }
        }
    }
}

/// The shared interface every representation implements.
///
/// Only [`Representation::output_spec`] and [`Representation::compute`] are
/// required. Learned representations (external experts) also override
/// `setup`, `load_weights` and `unload_weights`.
pub trait Representation: Send {
    fn output_spec(&self) -> OutputSpec;

    /// Checks the dependency outputs this instance will receive, in `deps` order.
    fn check_deps(&self, deps: &[OutputSpec]) -> Result<(), ReprError> {
        let _ = deps;
        Ok(())
    }

    /// One output frame per input frame. `deps` match the declared dependencies positionally.
    fn compute(&mut self, batch: &FrameBatch, deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError>;

    /// Renders a single-frame output as an `(H, W, 3)` image.
    fn make_image(&self, frame: &ReprOutput) -> Result<Array3<u8>, ReprError> {
        colorize::default_image(frame)
    }

    fn codec(&self) -> DiskCodec {
        DiskCodec::Identity
    }

    fn memory_to_disk(&self, frame: &ReprOutput, path: &Path, compress: bool) -> Result<(), ReprError> {
        let data = self.codec().encode(frame)?;
        npz::write_npz(path, &data, compress)?;
        Ok(())
    }

    fn disk_to_memory(&self, path: &Path) -> Result<ReprOutput, ReprError> {
        let data = npz::read_npz(path)?;
        self.codec().decode(data, &self.output_spec())
    }

    /// What a dependent would observe after a disk round trip.
    fn as_stored(&self, out: &ReprOutput) -> Result<ReprOutput, ReprError> {
        let codec = self.codec();
        if codec == DiskCodec::Identity {
            return Ok(out.clone());
        }
        let mut decoded = codec.decode(codec.encode(out)?, &self.output_spec())?;
        decoded.frame_stats = out.frame_stats.clone();
        Ok(decoded)
    }

    fn is_learned(&self) -> bool {
        false
    }

    /// Binds the instance to an opaque device label such as `cpu` or `dev:0`.
    fn setup(&mut self, device: &str) -> Result<(), ReprError> {
        let _ = device;
        Ok(())
    }

    fn load_weights(&mut self) -> Result<(), ReprError> {
        Ok(())
    }

    fn unload_weights(&mut self) {}
}

/// Builds a representation instance from its spec.
pub type Factory = fn(&RepresentationSpec) -> Result<Box<dyn Representation>, ReprError>;

/// Maps kind identifiers (e.g. `color/hsv`) to factories. Immutable once built.
#[derive(Clone, Default)]
pub struct Registry {
    factories: BTreeMap<String, Factory>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// All built-in kinds.
    pub fn builtin() -> Self {
        let mut r = Self::new();
        crate::reprs::register_builtins(&mut r);
        r
    }

    pub fn register(&mut self, kind: impl Into<String>, factory: Factory) -> &mut Self {
        self.factories.insert(kind.into(), factory);
        self
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.factories.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let factory = self.factories.get(&spec.kind).ok_or_else(|| {
            ReprError::InvalidInput(format!("unknown representation kind '{}'", spec.kind))
        })?;
        factory(spec)
    }
}

/// Checks a computed output against the batch it came from.
pub fn validate_output(
    name: &str,
    batch: &FrameBatch,
    spec: &OutputSpec,
    out: &ReprOutput,
) -> Result<(), ReprError> {
    let [n, h, w, c] = out.data.shape();
    let (bh, bw) = batch.frame_size();
    if n != batch.len() {
        return Err(ReprError::InvalidInput(format!(
            "'{name}' returned {n} frames for a batch of {}",
            batch.len()
        )));
    }
    if (h, w) != (bh, bw) {
        return Err(ReprError::InvalidInput(format!(
            "'{name}' returned {h}x{w} frames, expected {bh}x{bw}"
        )));
    }
    if out.data.kind() != spec.kind || spec.channels.is_some_and(|sc| sc != c) {
        return Err(ReprError::InvalidInput(format!(
            "'{name}' returned {:?} x {c}, declared {:?} x {:?}",
            out.data.kind(),
            spec.kind,
            spec.channels
        )));
    }
    Ok(())
}

/// Output frames for `frames`, sliced along the frame axis.
pub fn split_frames(out: &ReprOutput) -> Vec<ReprOutput> {
    (0..out.frames()).map(|i| out.frame(i)).collect()
}
