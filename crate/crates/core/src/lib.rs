//! Representation-graph execution engine for videos.
//!
//! A configuration names representations (color spaces, edges, depth,
//! normals, masks, external experts) and their dependencies. The engine runs
//! them in dependency order over a frame range, either exporting every frame
//! to disk in batches ([`engine`]) or processing a live stream of raw frames
//! with no disk writes ([`streaming`]).

pub mod config;
pub mod engine;
pub mod graph;
pub mod inspect;
pub mod parallel;
pub mod representation;
pub mod reprs;
pub mod storage;
pub mod streaming;
pub mod video;

pub use config::{parse_config, Config, GlobalConfig, OutputLayout, ParamValue, RepresentationSpec};
pub use graph::{build_graph, partition_groups, topo_sort, RepresentationGraph};
pub use representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, Registry, ReprError, ReprOutput, Representation,
};
pub use engine::{Engine, EngineError, FrameRange, RunOptions};
pub use storage::{ExportStore, FrameRecord, ReprMetadata, RunMetadata};
pub use streaming::{serve_stream, StreamOptions, StreamPipeline};
pub use video::{open_video, VideoSource};
