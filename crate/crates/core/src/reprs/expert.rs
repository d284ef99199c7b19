//! `expert/subprocess`: a representation computed by an external process
//! speaking the [`protocol`](super::protocol) over its stdin/stdout.
//!
//! The child is started by `load_weights` (or lazily on the first batch),
//! receives the RGB batch, and must answer with one output frame per input
//! frame. It sees the environment variables `VRE_DEVICE` (the label passed to
//! `setup`) and `VRE_WEIGHTS_PATH` (the `weights_path` parameter, if any). A
//! child that dies or times out fails the current batch and is restarted for
//! the next one.

use std::io::{self, BufReader, BufWriter};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::config::{ParamError, RepresentationSpec};
use crate::representation::{
    ArrayData, ChannelSemantics, DiskCodec, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};

use super::protocol::{self, Response};

pub const ENV_DEVICE: &str = "VRE_DEVICE";
pub const ENV_WEIGHTS: &str = "VRE_WEIGHTS_PATH";

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    pub command: Vec<String>,
    pub output: OutputSpec,
    pub codec: DiskCodec,
    pub timeout: Duration,
    pub weights_path: Option<PathBuf>,
}

impl ExpertConfig {
    pub fn from_params(spec: &RepresentationSpec) -> Result<Self, ParamError> {
        let p = &spec.params;
        p.expect_keys(&[
            "command",
            "out_channels",
            "out_kind",
            "semantics",
            "classes",
            "codec",
            "timeout_s",
            "weights_path",
        ])?;
        let command = p
            .str_list("command")?
            .filter(|c| !c.is_empty())
            .ok_or_else(|| ParamError::new("command", "required parameter is missing"))?;
        let kind_name = p.str_or("out_kind", "u8")?;
        let kind = ElementKind::parse(kind_name)
            .ok_or_else(|| ParamError::new("out_kind", format!("expected u8, f32 or f64, got '{kind_name}'")))?;
        let channels = p.usize_or("out_channels", 3)?;
        if channels == 0 {
            return Err(ParamError::new("out_channels", "must be >= 1"));
        }
        let classes = p.usize_or("classes", channels)? as u32;
        let sem_name = p.str_or("semantics", "raw")?;
        let semantics = ChannelSemantics::parse(sem_name, classes)
            .ok_or_else(|| ParamError::new("semantics", format!("unknown semantics '{sem_name}'")))?;
        let codec_name = p.str_or("codec", "identity")?;
        let codec = DiskCodec::parse(codec_name)
            .ok_or_else(|| ParamError::new("codec", format!("unknown codec '{codec_name}'")))?;
        if codec == DiskCodec::ArgmaxU8 && !semantics.is_semantic() {
            return Err(ParamError::new("codec", "argmax storage needs class_scores or class_index semantics"));
        }
        let timeout_s = p.f64_or("timeout_s", 60.0)?;
        if !(timeout_s.is_finite() && timeout_s > 0.0) {
            return Err(ParamError::new("timeout_s", format!("must be > 0, got {timeout_s}")));
        }
        Ok(Self {
            command,
            output: OutputSpec::new(kind, channels, semantics),
            codec,
            timeout: Duration::from_secs_f64(timeout_s),
            weights_path: p.str_opt("weights_path")?.map(PathBuf::from),
        })
    }
}

enum Message {
    Hello(io::Result<u32>),
    Response(io::Result<Response>),
}

struct Running {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    replies: Receiver<Message>,
}

impl Running {
    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct SubprocessExpert {
    config: ExpertConfig,
    device: String,
    process: Option<Running>,
}

impl SubprocessExpert {
    pub fn new(config: ExpertConfig) -> Self {
        Self {
            config,
            device: "cpu".into(),
            process: None,
        }
    }

    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        Ok(Box::new(Self::new(ExpertConfig::from_params(spec)?)))
    }

    pub fn is_running(&self) -> bool {
        self.process.is_some()
    }

    fn spawn(&self) -> Result<Running, ReprError> {
        let (program, args) = self.config.command.split_first().expect("command is non-empty");
        let mut cmd = Command::new(program);
        cmd.args(args)
            .env(ENV_DEVICE, &self.device)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit());
        if let Some(w) = &self.config.weights_path {
            cmd.env(ENV_WEIGHTS, w);
        }
        let mut child = cmd
            .spawn()
            .map_err(|e| ReprError::Expert(format!("cannot start '{program}': {e}")))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let (tx, replies) = mpsc::channel();
        thread::spawn(move || {
            let hello = protocol::read_hello(&mut stdout);
            let ok = hello.is_ok();
            if tx.send(Message::Hello(hello)).is_err() || !ok {
                return;
            }
            loop {
                let reply = protocol::read_response(&mut stdout);
                let failed = reply.is_err();
                if tx.send(Message::Response(reply)).is_err() || failed {
                    return;
                }
            }
        });
        let running = Running { child, stdin, replies };
        match running.replies.recv_timeout(self.config.timeout) {
            Ok(Message::Hello(Ok(_))) => Ok(running),
            Ok(Message::Hello(Err(e))) => {
                running.kill();
                Err(ReprError::Expert(format!("'{program}' sent no valid hello: {e}")))
            }
            Ok(Message::Response(_)) => unreachable!("responses follow the hello"),
            Err(_) => {
                running.kill();
                Err(ReprError::Expert(format!("'{program}' did not say hello within {:?}", self.config.timeout)))
            }
        }
    }

    fn ensure_running(&mut self) -> Result<&mut Running, ReprError> {
        if self.process.is_none() {
            self.process = Some(self.spawn()?);
        }
        Ok(self.process.as_mut().expect("just spawned"))
    }

    fn fail(&mut self, message: String) -> ReprError {
        if let Some(p) = self.process.take() {
            p.kill();
        }
        ReprError::Expert(message)
    }

    fn exchange(&mut self, input: &ArrayData) -> Result<Response, ReprError> {
        let timeout = self.config.timeout;
        let proc = self.ensure_running()?;
        if let Err(e) = protocol::write_request(&mut proc.stdin, input) {
            return Err(self.fail(format!("writing to expert failed: {e}")));
        }
        match proc.replies.recv_timeout(timeout) {
            Ok(Message::Response(Ok(r))) => Ok(r),
            Ok(Message::Response(Err(e))) => Err(self.fail(format!("expert stream broke: {e}"))),
            Ok(Message::Hello(_)) => Err(self.fail("unexpected second hello".into())),
            Err(RecvTimeoutError::Timeout) => Err(self.fail(format!("expert timed out after {timeout:?}"))),
            Err(RecvTimeoutError::Disconnected) => Err(self.fail("expert exited".into())),
        }
    }
}

impl Drop for SubprocessExpert {
    fn drop(&mut self) {
        if let Some(p) = self.process.take() {
            p.kill();
        }
    }
}

impl Representation for SubprocessExpert {
    fn output_spec(&self) -> OutputSpec {
        self.config.output
    }

    fn compute(&mut self, batch: &FrameBatch, _deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let input = ArrayData::U8(batch.frames.clone());
        match self.exchange(&input)? {
            Response::Ok(data) => {
                let spec = self.config.output;
                let [n, h, w, c] = data.shape();
                let (bh, bw) = batch.frame_size();
                if n != batch.len() || (h, w) != (bh, bw) || data.kind() != spec.kind || Some(c) != spec.channels {
                    return Err(ReprError::Expert(format!(
                        "expert returned {:?} {:?}, expected {:?} [{}, {bh}, {bw}, {:?}]",
                        data.kind(),
                        data.shape(),
                        spec.kind,
                        batch.len(),
                        spec.channels
                    )));
                }
                Ok(ReprOutput::new(data, spec.semantics))
            }
            Response::Error(msg) => Err(ReprError::Expert(msg)),
            Response::ResourceExhausted(msg) => Err(ReprError::ResourceExhausted(msg)),
        }
    }

    fn codec(&self) -> DiskCodec {
        self.config.codec
    }

    fn is_learned(&self) -> bool {
        true
    }

    fn setup(&mut self, device: &str) -> Result<(), ReprError> {
        if self.device != device {
            self.unload_weights();
            self.device = device.to_string();
        }
        Ok(())
    }

    fn load_weights(&mut self) -> Result<(), ReprError> {
        self.ensure_running().map(|_| ())
    }

    fn unload_weights(&mut self) {
        if let Some(p) = self.process.take() {
            p.kill();
        }
    }
}
