//! Streaming mode: raw RGB frames in, rendered frames of one representation
//! out, one frame at a time and nothing written to disk.
//!
//! An ingest thread reads frames into a one-slot [`Mailbox`]; the processing
//! loop takes whatever frame is newest, runs the terminal representation's
//! dependency chain on it with batch size 1, renders it with `make_image`
//! and writes the raw result. When processing is slower than the source,
//! frames in between are overwritten and never processed, so memory stays at
//! a constant number of frames.
//!
//! Dependencies are passed in their after-disk form, which makes every
//! emitted frame identical to the one batch mode would render for it.

pub mod fps;
pub mod header;
pub mod mailbox;

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use ndarray::{Array3, Array4, Axis};
use thiserror::Error;

use crate::config::GlobalConfig;
use crate::graph::RepresentationGraph;
use crate::representation::{FrameBatch, Registry, ReprError, ReprOutput, Representation};
use crate::video::resize_bilinear;

pub use fps::{Clock, FpsLog, FpsRecord, SystemClock};
pub use header::{HeaderError, StreamHeader};
pub use mailbox::{DropPolicy, Mailbox};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Header(#[from] HeaderError),
    #[error("unknown representation '{0}'")]
    UnknownRepresentation(String),
    #[error("'{0}' depends on '{1}', which is not computed in this configuration")]
    DiskOnlyDependency(String, String),
    #[error("representation '{name}': {source}")]
    Repr {
        name: String,
        #[source]
        source: ReprError,
    },
    #[error("rendered frame is {got_h}x{got_w}, stream header announced {h}x{w}")]
    OutputSize { h: usize, w: usize, got_h: usize, got_w: usize },
    #[error("stream i/o: {0}")]
    Io(#[from] io::Error),
}

/// The in-memory dependency chain of one terminal representation.
pub struct StreamPipeline {
    terminal: String,
    order: Vec<String>,
    deps: BTreeMap<String, Vec<String>>,
    instances: BTreeMap<String, Box<dyn Representation>>,
    output_size: Option<(usize, usize)>,
}

impl StreamPipeline {
    pub fn new(
        graph: &RepresentationGraph,
        globals: &GlobalConfig,
        terminal: &str,
        registry: &Registry,
        device: &str,
    ) -> Result<Self, StreamError> {
        let sub = graph
            .ancestors_of(terminal)
            .ok_or_else(|| StreamError::UnknownRepresentation(terminal.to_string()))?;
        if let Some(input) = sub.disk_inputs().next() {
            let user = sub
                .nodes()
                .find(|n| n.deps.contains(&input.name))
                .map_or_else(|| terminal.to_string(), |n| n.name.clone());
            return Err(StreamError::DiskOnlyDependency(user, input.name.clone()));
        }
        let mut instances = BTreeMap::new();
        let mut deps = BTreeMap::new();
        for spec in sub.nodes() {
            let wrap = |source| StreamError::Repr {
                name: spec.name.clone(),
                source,
            };
            let mut inst = registry.create(spec).map_err(wrap)?;
            if inst.is_learned() {
                inst.setup(device).and_then(|_| inst.load_weights()).map_err(wrap)?;
            }
            instances.insert(spec.name.clone(), inst);
            deps.insert(spec.name.clone(), spec.deps.clone());
        }
        for (name, ds) in &deps {
            let specs: Vec<_> = ds.iter().map(|d| instances[d].output_spec()).collect();
            instances[name].check_deps(&specs).map_err(|source| StreamError::Repr {
                name: name.clone(),
                source,
            })?;
        }
        Ok(Self {
            terminal: terminal.to_string(),
            order: sub.topo_order().to_vec(),
            deps,
            instances,
            output_size: globals.output_size,
        })
    }

    pub fn terminal(&self) -> &str {
        &self.terminal
    }

    /// The frame size representations see for input frames of `(h, w)`.
    pub fn working_size(&self, h: usize, w: usize) -> (usize, usize) {
        self.output_size.unwrap_or((h, w))
    }

    /// Runs the chain on one frame and renders the terminal output.
    pub fn process(&mut self, index: usize, frame: Array3<u8>) -> Result<Array3<u8>, StreamError> {
        let frame = match self.output_size {
            Some((h, w)) => resize_bilinear(frame.view(), h, w),
            None => frame,
        };
        let batch = FrameBatch::new(vec![index], frame.insert_axis(Axis(0)));
        let mut outputs: BTreeMap<&str, ReprOutput> = BTreeMap::new();
        for name in &self.order {
            let wrap = |source| StreamError::Repr {
                name: name.clone(),
                source,
            };
            let dep_refs: Vec<&ReprOutput> = self.deps[name].iter().map(|d| &outputs[d.as_str()]).collect();
            let inst = self.instances.get_mut(name).expect("instance exists");
            let out = inst.compute(&batch, &dep_refs).map_err(wrap)?;
            crate::representation::validate_output(name, &batch, &inst.output_spec(), &out).map_err(wrap)?;
            if *name == self.terminal {
                return inst.make_image(&out).map_err(wrap);
            }
            let stored = inst.as_stored(&out).map_err(wrap)?;
            outputs.insert(name, stored);
        }
        unreachable!("terminal is last in its own ancestor order")
    }
}

impl Drop for StreamPipeline {
    fn drop(&mut self) {
        for inst in self.instances.values_mut() {
            if inst.is_learned() {
                inst.unload_weights();
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct StreamOptions {
    /// Only every `stride`-th received frame is offered for processing.
    pub stride: u64,
    /// Upper bound on the processing rate.
    pub max_fps: Option<f64>,
    pub policy: DropPolicy,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            max_fps: None,
            policy: DropPolicy::LatestWins,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamStats {
    pub received: u64,
    pub processed: u64,
    /// `received - processed`: stride skips plus mailbox overwrites.
    pub dropped: u64,
    /// Input indices of the emitted frames, in emit order.
    pub emitted: Vec<u64>,
    /// The consumer hung up before the input ended.
    pub output_closed: bool,
}

/// Runs a session until the input ends or the consumer goes away.
///
/// A malformed header aborts before anything is written. A short read in the
/// middle of a frame ends the input cleanly.
pub fn serve_stream<R, W>(
    pipeline: &mut StreamPipeline,
    mut input: R,
    mut output: W,
    opts: &StreamOptions,
    clock: &dyn Clock,
    mut fps_log: Option<&mut FpsLog<Box<dyn Write + Send>>>,
) -> Result<StreamStats, StreamError>
where
    R: Read + Send + 'static,
    W: Write,
{
    let header = StreamHeader::read_from(&mut input)?;
    let (in_h, in_w) = (header.height as usize, header.width as usize);
    let (out_h, out_w) = pipeline.working_size(in_h, in_w);
    StreamHeader::rgb(out_w, out_h).write_to(&mut output)?;
    output.flush()?;

    let mailbox = Arc::new(Mailbox::<Array3<u8>>::new(opts.policy));
    let received = Arc::new(AtomicU64::new(0));
    let stride = opts.stride.max(1);
    let ingest = {
        let mailbox = Arc::clone(&mailbox);
        let received = Arc::clone(&received);
        thread::spawn(move || {
            let mut buf = vec![0u8; header.frame_bytes()];
            let mut seq = 0u64;
            while read_frame(&mut input, &mut buf) {
                received.store(seq + 1, Ordering::SeqCst);
                if seq % stride == 0 {
                    let frame = Array3::from_shape_vec((in_h, in_w, 3), buf.clone()).expect("frame size");
                    if !mailbox.push(seq, frame) {
                        break;
                    }
                }
                seq += 1;
            }
            mailbox.close();
        })
    };

    let min_interval = opts.max_fps.filter(|f| *f > 0.0).map(|f| Duration::from_secs_f64(1.0 / f));
    let mut stats = StreamStats::default();
    let mut last_start: Option<Instant> = None;
    let result = (|| -> Result<(), StreamError> {
        while let Some((seq, frame)) = mailbox.take() {
            let image = pipeline.process(seq as usize, frame)?;
            let (h, w, _) = image.dim();
            if (h, w) != (out_h, out_w) {
                return Err(StreamError::OutputSize {
                    h: out_h,
                    w: out_w,
                    got_h: h,
                    got_w: w,
                });
            }
            let bytes = image.as_standard_layout();
            match output.write_all(bytes.as_slice().expect("standard layout")).and_then(|_| output.flush()) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::BrokenPipe => {
                    stats.output_closed = true;
                    return Ok(());
                }
                Err(e) => return Err(e.into()),
            }
            stats.processed += 1;
            stats.emitted.push(seq);
            if let Some(log) = fps_log.as_deref_mut() {
                log.record(clock.now(), seq, received.load(Ordering::SeqCst), stats.processed)?;
            }
            if let Some(interval) = min_interval {
                if let Some(prev) = last_start {
                    let next = prev + interval;
                    let now = Instant::now();
                    if next > now {
                        thread::sleep(next - now);
                    }
                }
                last_start = Some(Instant::now());
            }
        }
        Ok(())
    })();
    mailbox.close();
    if !stats.output_closed && result.is_ok() {
        let _ = ingest.join();
    }
    result?;
    stats.received = received.load(Ordering::SeqCst);
    stats.dropped = stats.received - stats.processed;
    Ok(stats)
}

/// Fills `buf` with one frame. False on end of input, including a partial
/// frame.
fn read_frame(r: &mut impl Read, buf: &mut [u8]) -> bool {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => return false,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(_) => return false,
        }
    }
    true
}

/// Writes a header and frames in the stream wire format.
pub fn write_stream(w: &mut impl Write, frames: &Array4<u8>) -> io::Result<()> {
    let (_, h, wd, c) = frames.dim();
    assert_eq!(c, 3, "stream frames are RGB");
    StreamHeader::rgb(wd, h).write_to(w)?;
    w.write_all(frames.as_standard_layout().as_slice().expect("standard layout"))
}

/// Reads a header and all whole frames that follow.
pub fn read_stream(r: &mut impl Read) -> Result<(StreamHeader, Vec<Array3<u8>>), HeaderError> {
    let header = StreamHeader::read_from(r)?;
    let mut buf = vec![0u8; header.frame_bytes()];
    let mut frames = Vec::new();
    while read_frame(r, &mut buf) {
        frames.push(
            Array3::from_shape_vec((header.height as usize, header.width as usize, 3), buf.clone()).expect("frame size"),
        );
    }
    Ok((header, frames))
}

/// Where a session's frames come from and go to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEndpoint {
    /// Standard input and output.
    Stdio,
    /// Accept one TCP connection and use it both ways.
    Listen(String),
    /// Connect to a TCP peer and use it both ways.
    Connect(String),
}

pub type StreamReader = Box<dyn Read + Send>;
pub type StreamWriter = Box<dyn Write + Send>;

impl StreamEndpoint {
    pub fn open(&self) -> io::Result<(StreamReader, StreamWriter)> {
        match self {
            StreamEndpoint::Stdio => Ok((Box::new(io::stdin()), Box::new(io::stdout()))),
            StreamEndpoint::Listen(addr) => {
                let listener = TcpListener::bind(addr)?;
                log::info!("listening on {}", listener.local_addr()?);
                let (sock, peer) = listener.accept()?;
                log::info!("connection from {peer}");
                Self::split(sock)
            }
            StreamEndpoint::Connect(addr) => Self::split(TcpStream::connect(addr)?),
        }
    }

    fn split(sock: TcpStream) -> io::Result<(StreamReader, StreamWriter)> {
        sock.set_nodelay(true)?;
        Ok((Box::new(sock.try_clone()?), Box::new(sock)))
    }
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;
    use crate::config::RepresentationSpec;
    use crate::graph::build_graph;
    use crate::video::synthetic_clip;

    fn pipeline(specs: &[RepresentationSpec], terminal: &str) -> StreamPipeline {
        let graph = build_graph(specs).unwrap();
        StreamPipeline::new(&graph, &GlobalConfig::default(), terminal, &Registry::builtin(), "cpu").unwrap()
    }

    fn encoded(frames: &Array4<u8>) -> Vec<u8> {
        let mut v = Vec::new();
        write_stream(&mut v, frames).unwrap();
        v
    }

    fn lossless() -> StreamOptions {
        StreamOptions {
            policy: DropPolicy::Block,
            ..Default::default()
        }
    }

    #[test]
    fn identity_stream_is_byte_equal() {
        let clip = synthetic_clip(10, 12, 16);
        let input = encoded(&clip);
        let mut p = pipeline(&[RepresentationSpec::new("rgb", "color/rgb", &[])], "rgb");
        let mut out = Vec::new();
        let stats = serve_stream(&mut p, Cursor::new(input.clone()), &mut out, &lossless(), &SystemClock::new(), None).unwrap();
        assert_eq!(out, input);
        assert_eq!(stats.processed, 10);
        assert_eq!(stats.dropped, 0);
        assert_eq!(stats.emitted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn bad_magic_aborts_before_output() {
        let mut input = encoded(&synthetic_clip(1, 4, 4));
        input[0] = b'X';
        let mut p = pipeline(&[RepresentationSpec::new("rgb", "color/rgb", &[])], "rgb");
        let mut out = Vec::new();
        let err = serve_stream(&mut p, Cursor::new(input), &mut out, &lossless(), &SystemClock::new(), None).unwrap_err();
        assert!(matches!(err, StreamError::Header(HeaderError::BadMagic(_))), "{err}");
        assert!(out.is_empty());
    }

    #[test]
    fn truncated_frame_ends_cleanly() {
        let mut input = encoded(&synthetic_clip(3, 4, 4));
        input.truncate(input.len() - 5);
        let mut p = pipeline(&[RepresentationSpec::new("rgb", "color/rgb", &[])], "rgb");
        let mut out = Vec::new();
        let stats = serve_stream(&mut p, Cursor::new(input), &mut out, &lossless(), &SystemClock::new(), None).unwrap();
        assert_eq!(stats.received, 2);
        assert_eq!(stats.processed, 2);
    }

    #[test]
    fn stride_selects_every_nth() {
        let input = encoded(&synthetic_clip(10, 4, 4));
        let mut p = pipeline(&[RepresentationSpec::new("rgb", "color/rgb", &[])], "rgb");
        let opts = StreamOptions {
            stride: 3,
            ..lossless()
        };
        let stats = serve_stream(&mut p, Cursor::new(input), io::sink(), &opts, &SystemClock::new(), None).unwrap();
        assert_eq!(stats.emitted, vec![0, 3, 6, 9]);
        assert_eq!(stats.dropped, 6);
    }

    #[test]
    fn chain_matches_direct_computation() {
        let specs = [
            RepresentationSpec::new("rgb", "color/rgb", &[]),
            RepresentationSpec::new("edges", "edges/canny", &["rgb"]),
        ];
        let clip = synthetic_clip(3, 24, 32);
        let mut p = pipeline(&specs, "edges");
        let mut out = Vec::new();
        serve_stream(&mut p, Cursor::new(encoded(&clip)), &mut out, &lossless(), &SystemClock::new(), None).unwrap();
        let (header, frames) = read_stream(&mut Cursor::new(out)).unwrap();
        assert_eq!((header.width, header.height), (32, 24));
        let canny = crate::reprs::canny::Canny::new(50.0, 100.0, 1.0).unwrap();
        for (i, frame) in frames.iter().enumerate() {
            let edges = canny.edges(clip.index_axis(Axis(0), i));
            for ((y, x, _), v) in frame.indexed_iter() {
                assert_eq!(*v, edges[(y, x)]);
            }
        }
    }

    #[test]
    fn disk_only_dependency_is_rejected() {
        let specs = [RepresentationSpec::new("edges", "edges/canny", &["rgb"])];
        let full = build_graph(&[RepresentationSpec::new("rgb", "color/rgb", &[]), specs[0].clone()]).unwrap();
        let assignment = [("rgb", "a"), ("edges", "b")]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let groups = crate::graph::partition_groups(&full, &assignment, &GlobalConfig::default()).unwrap();
        let err = StreamPipeline::new(&groups[1].1, &GlobalConfig::default(), "edges", &Registry::builtin(), "cpu")
            .err()
            .unwrap();
        assert!(matches!(err, StreamError::DiskOnlyDependency(_, _)), "{err}");
    }
}
