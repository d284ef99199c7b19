use ndarray::{concatenate, s, Array4, ArrayView4, Axis};
use serde::{Deserialize, Serialize};

/// Element type of an exported array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    U8,
    F32,
    F64,
}

impl ElementKind {
    pub fn size(self) -> usize {
        match self {
            ElementKind::U8 => 1,
            ElementKind::F32 => 4,
            ElementKind::F64 => 8,
        }
    }

    /// Wire code used by the expert protocol.
    pub fn code(self) -> u8 {
        match self {
            ElementKind::U8 => 0,
            ElementKind::F32 => 1,
            ElementKind::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ElementKind::U8),
            1 => Some(ElementKind::F32),
            2 => Some(ElementKind::F64),
            _ => None,
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "u8" | "uint8" => Some(ElementKind::U8),
            "f32" | "float32" => Some(ElementKind::F32),
            "f64" | "float64" => Some(ElementKind::F64),
            _ => None,
        }
    }
}

/// A batch of frames, shape `(N, H, W, C)`.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    U8(Array4<u8>),
    F32(Array4<f32>),
    F64(Array4<f64>),
}

macro_rules! each {
    ($self:expr, $a:ident => $body:expr) => {
        match $self {
            ArrayData::U8($a) => $body,
            ArrayData::F32($a) => $body,
            ArrayData::F64($a) => $body,
        }
    };
}

macro_rules! map_each {
    ($self:expr, $a:ident => $body:expr) => {
        match $self {
            ArrayData::U8($a) => ArrayData::U8($body),
            ArrayData::F32($a) => ArrayData::F32($body),
            ArrayData::F64($a) => ArrayData::F64($body),
        }
    };
}

impl ArrayData {
    pub fn kind(&self) -> ElementKind {
        match self {
            ArrayData::U8(_) => ElementKind::U8,
            ArrayData::F32(_) => ElementKind::F32,
            ArrayData::F64(_) => ElementKind::F64,
        }
    }

    /// `[N, H, W, C]`
    pub fn shape(&self) -> [usize; 4] {
        let d = each!(self, a => a.dim());
        [d.0, d.1, d.2, d.3]
    }

    pub fn frames(&self) -> usize {
        self.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.shape()[3]
    }

    pub fn byte_len(&self) -> usize {
        self.shape().iter().product::<usize>() * self.kind().size()
    }

    /// Frames `start..end` as a new array.
    pub fn slice_frames(&self, start: usize, end: usize) -> ArrayData {
        map_each!(self, a => a.slice(s![start..end, .., .., ..]).to_owned())
    }

    pub fn frame(&self, i: usize) -> ArrayData {
        self.slice_frames(i, i + 1)
    }

    /// Concatenates along the frame axis. All parts must share kind and frame shape.
    pub fn concat(parts: &[ArrayData]) -> Option<ArrayData> {
        let first = parts.first()?;
        macro_rules! cat {
            ($variant:ident) => {{
                let views: Option<Vec<ArrayView4<_>>> = parts
                    .iter()
                    .map(|p| match p {
                        ArrayData::$variant(a) => Some(a.view()),
                        _ => None,
                    })
                    .collect();
                concatenate(Axis(0), &views?).ok().map(ArrayData::$variant)
            }};
        }
        match first {
            ArrayData::U8(_) => cat!(U8),
            ArrayData::F32(_) => cat!(F32),
            ArrayData::F64(_) => cat!(F64),
        }
    }

    /// Little-endian, row-major bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        match self {
            ArrayData::U8(a) => out.extend(a.iter().copied()),
            ArrayData::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ArrayData::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        }
        out
    }

    /// Inverse of [`ArrayData::to_le_bytes`]. Returns `None` on a size mismatch.
    pub fn from_le_bytes(kind: ElementKind, shape: [usize; 4], bytes: &[u8]) -> Option<ArrayData> {
        let count: usize = shape.iter().product();
        if bytes.len() != count * kind.size() {
            return None;
        }
        let shape = (shape[0], shape[1], shape[2], shape[3]);
        Some(match kind {
            ElementKind::U8 => ArrayData::U8(Array4::from_shape_vec(shape, bytes.to_vec()).ok()?),
            ElementKind::F32 => ArrayData::F32(
                Array4::from_shape_vec(
                    shape,
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
                .ok()?,
            ),
            ElementKind::F64 => ArrayData::F64(
                Array4::from_shape_vec(
                    shape,
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
                .ok()?,
            ),
        })
    }

    /// Values widened to f64, row-major. Used by consumers that accept any kind.
    pub fn to_f64(&self) -> Array4<f64> {
        match self {
            ArrayData::U8(a) => a.mapv(f64::from),
            ArrayData::F32(a) => a.mapv(f64::from),
            ArrayData::F64(a) => a.clone(),
        }
    }

    /// True when every element is bit-identical (so NaN payloads compare equal).
    pub fn bit_eq(&self, other: &ArrayData) -> bool {
        self.kind() == other.kind() && self.shape() == other.shape() && self.to_le_bytes() == other.to_le_bytes()
    }
}
