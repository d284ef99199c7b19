//! Wire format between the engine and an external expert process.
//!
//! On start the expert writes a hello: the 4 bytes `VREX` and a `u32` protocol
//! version. Afterwards each request and response is one frame:
//!
//! ```text
//! frame    := body_len: u32  body
//! request  := array
//! response := status: u8 (0 ok, 1 error, 2 resource exhausted)
//!             (array if status = 0, else a UTF-8 message)
//! array    := frame_count: u32  height: u32  width: u32  channels: u32
//!             kind: u8 (0 uint8, 1 float32, 2 float64)  payload
//! ```
//!
//! All integers are little-endian; the payload is row-major `(N, H, W, C)`.

use std::io::{self, ErrorKind, Read, Write};

use crate::representation::{ArrayData, ElementKind};

pub const HELLO_MAGIC: &[u8; 4] = b"VREX";
pub const PROTOCOL_VERSION: u32 = 1;
const ARRAY_HEADER_LEN: usize = 17;

pub const STATUS_OK: u8 = 0;
pub const STATUS_ERROR: u8 = 1;
pub const STATUS_RESOURCE_EXHAUSTED: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Ok(ArrayData),
    Error(String),
    ResourceExhausted(String),
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(ErrorKind::InvalidData, msg.into())
}

pub fn write_hello(w: &mut impl Write) -> io::Result<()> {
    w.write_all(HELLO_MAGIC)?;
    w.write_all(&PROTOCOL_VERSION.to_le_bytes())?;
    w.flush()
}

pub fn read_hello(r: &mut impl Read) -> io::Result<u32> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf[..4] != HELLO_MAGIC {
        return Err(invalid(format!("bad expert hello {:?}", &buf[..4])));
    }
    let version = u32::from_le_bytes(buf[4..].try_into().unwrap());
    if version != PROTOCOL_VERSION {
        return Err(invalid(format!("unsupported expert protocol version {version}")));
    }
    Ok(version)
}

pub fn encode_array(data: &ArrayData) -> Vec<u8> {
    let [n, h, w, c] = data.shape();
    let mut out = Vec::with_capacity(ARRAY_HEADER_LEN + data.byte_len());
    for v in [n, h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(data.kind().code());
    out.extend_from_slice(&data.to_le_bytes());
    out
}

pub fn decode_array(body: &[u8]) -> io::Result<ArrayData> {
    if body.len() < ARRAY_HEADER_LEN {
        return Err(invalid("array header truncated"));
    }
    let dim = |i: usize| u32::from_le_bytes(body[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2), dim(3)];
    let kind = ElementKind::from_code(body[16]).ok_or_else(|| invalid(format!("unknown element kind {}", body[16])))?;
    ArrayData::from_le_bytes(kind, shape, &body[ARRAY_HEADER_LEN..])
        .ok_or_else(|| invalid(format!("payload does not match shape {shape:?} of {kind:?}")))
}

fn write_frame(w: &mut impl Write, parts: &[&[u8]]) -> io::Result<()> {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let len = u32::try_from(len).map_err(|_| invalid("frame larger than 4 GiB"))?;
    w.write_all(&len.to_le_bytes())?;
    for p in parts {
        w.write_all(p)?;
    }
    w.flush()
}

/// Reads one frame body; `Ok(None)` on a clean end of stream before the length.
fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let mut body = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

pub fn write_request(w: &mut impl Write, data: &ArrayData) -> io::Result<()> {
    write_frame(w, &[&encode_array(data)])
}

pub fn read_request(r: &mut impl Read) -> io::Result<Option<ArrayData>> {
    read_frame(r)?.map(|body| decode_array(&body)).transpose()
}

pub fn write_response(w: &mut impl Write, response: &Response) -> io::Result<()> {
    match response {
        Response::Ok(data) => write_frame(w, &[&[STATUS_OK], &encode_array(data)]),
        Response::Error(msg) => write_frame(w, &[&[STATUS_ERROR], msg.as_bytes()]),
        Response::ResourceExhausted(msg) => write_frame(w, &[&[STATUS_RESOURCE_EXHAUSTED], msg.as_bytes()]),
    }
}

pub fn read_response(r: &mut impl Read) -> io::Result<Response> {
    let body = read_frame(r)?.ok_or_else(|| io::Error::new(ErrorKind::UnexpectedEof, "expert closed its output"))?;
    let (&status, rest) = body.split_first().ok_or_else(|| invalid("empty response"))?;
    let message = || String::from_utf8_lossy(rest).into_owned();
    match status {
        STATUS_OK => Ok(Response::Ok(decode_array(rest)?)),
        STATUS_ERROR => Ok(Response::Error(message())),
        STATUS_RESOURCE_EXHAUSTED => Ok(Response::ResourceExhausted(message())),
        other => Err(invalid(format!("unknown response status {other}"))),
    }
}

/// Expert side: sends the hello, then answers requests with `handler` until
/// the engine closes the stream.
pub fn serve(
    r: &mut impl Read,
    w: &mut impl Write,
    mut handler: impl FnMut(ArrayData) -> Response,
) -> io::Result<()> {
    write_hello(w)?;
    while let Some(request) = read_request(r)? {
        write_response(w, &handler(request))?;
    }
    Ok(())
}
