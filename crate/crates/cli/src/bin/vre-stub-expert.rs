//! A scripted expert process speaking the subprocess protocol, for tests and
//! demos.
//!
//! ```text
//! vre-stub-expert [--log FILE] MODE [ARGS]
//!   echo              return the input frames
//!   constant V [C]    u8 frames of C channels (default 1) filled with V
//!   fail-above N      resource-exhausted for batches of more than N frames, else echo
//!   crash-after K     answer K requests, then exit without answering
//!   error             answer every request with an error
//!   classes C         f32 scores over C classes, the winner picked by red intensity
//! ```
//!
//! With `--log FILE`, one line `device=<VRE_DEVICE> frames=<n>` is appended
//! per request.

use std::fs::OpenOptions;
use std::io::{self, BufReader, BufWriter, Write};
use std::process::ExitCode;

use ndarray::Array4;
use vre_core::representation::ArrayData;
use vre_core::reprs::expert::ENV_DEVICE;
use vre_core::reprs::protocol::{read_request, write_hello, write_response, Response};

enum Mode {
    Echo,
    Constant(u8, usize),
    FailAbove(usize),
    CrashAfter(usize),
    Error,
    Classes(usize),
}

fn usage() -> ExitCode {
    eprintln!("usage: vre-stub-expert [--log FILE] echo | constant V [C] | fail-above N | crash-after K | error | classes C");
    ExitCode::from(64)
}

fn parse(args: &[String]) -> Option<(Option<String>, Mode)> {
    let (log, rest) = match args {
        [flag, file, rest @ ..] if flag == "--log" => (Some(file.clone()), rest),
        rest => (None, rest),
    };
    let num = |s: &String| s.parse::<usize>().ok();
    let mode = match rest {
        [m] if m == "echo" => Mode::Echo,
        [m] if m == "error" => Mode::Error,
        [m, v] if m == "constant" => Mode::Constant(v.parse().ok()?, 1),
        [m, v, c] if m == "constant" => Mode::Constant(v.parse().ok()?, num(c).filter(|&c| c > 0)?),
        [m, n] if m == "fail-above" => Mode::FailAbove(num(n)?),
        [m, k] if m == "crash-after" => Mode::CrashAfter(num(k)?),
        [m, c] if m == "classes" => Mode::Classes(num(c).filter(|&c| c > 0)?),
        _ => return None,
    };
    Some((log, mode))
}

fn answer(mode: &Mode, input: ArrayData) -> Response {
    let [n, h, w, _] = input.shape();
    match mode {
        Mode::Echo | Mode::CrashAfter(_) => Response::Ok(input),
        Mode::FailAbove(limit) if n > *limit => {
            Response::ResourceExhausted(format!("batch of {n} frames exceeds {limit}"))
        }
        Mode::FailAbove(_) => Response::Ok(input),
        Mode::Constant(v, c) => Response::Ok(ArrayData::U8(Array4::from_elem((n, h, w, *c), *v))),
        Mode::Error => Response::Error("stub expert configured to fail".into()),
        Mode::Classes(c) => {
            let red = input.to_f64();
            let scores = Array4::from_shape_fn((n, h, w, *c), |(i, y, x, k)| {
                let winner = ((red[(i, y, x, 0)] / 256.0) * *c as f64) as usize;
                if k == winner { 1.0f32 } else { 0.0 }
            });
            Response::Ok(ArrayData::F32(scores))
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some((log_path, mode)) = parse(&args) else {
        return usage();
    };
    let mut log = log_path.map(|p| OpenOptions::new().create(true).append(true).open(p));
    let device = std::env::var(ENV_DEVICE).unwrap_or_default();
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    if write_hello(&mut output).and_then(|_| output.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    let mut answered = 0usize;
    loop {
        let request = match read_request(&mut input) {
            Ok(Some(r)) => r,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("vre-stub-expert: {e}");
                return ExitCode::FAILURE;
            }
        };
        if let Some(Ok(f)) = log.as_mut() {
            let _ = writeln!(f, "device={device} frames={}", request.frames());
        }
        if let Mode::CrashAfter(k) = mode {
            if answered >= k {
                eprintln!("vre-stub-expert: crashing after {k} requests");
                return ExitCode::from(3);
            }
        }
        let response = answer(&mode, request);
        if write_response(&mut output, &response).and_then(|_| output.flush()).is_err() {
            return ExitCode::FAILURE;
        }
        answered += 1;
    }
}
