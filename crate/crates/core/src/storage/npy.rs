//! The NumPy `.npy` single-array format, version 1.0 on write.
//!
//! Layout: magic `\x93NUMPY`, two version bytes, a little-endian header length
//! (`u16` for 1.0, `u32` for 2.0/3.0), an ASCII Python dict literal padded with
//! spaces and a newline so the data starts on a 64-byte boundary, then the raw
//! C-order payload.

use crate::representation::{ArrayData, ElementKind};

use super::npz::NpzError;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

fn descr(kind: ElementKind) -> &'static str {
    match kind {
        ElementKind::U8 => "|u1",
        ElementKind::F32 => "<f4",
        ElementKind::F64 => "<f8",
    }
}

/// Serializes one frame of `data` (frame axis dropped, shape `(H, W, C)`).
pub fn encode_frame(data: &ArrayData) -> Result<Vec<u8>, NpzError> {
    let [n, h, w, c] = data.shape();
    if n != 1 {
        return Err(NpzError::Format(format!("expected a single frame, got {n}")));
    }
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({h}, {w}, {c}), }}",
        descr(data.kind())
    );
    // magic(6) + version(2) + len(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = total - MAGIC.len() - 4;
    let mut out = Vec::with_capacity(total + data.byte_len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    out.extend_from_slice(&data.to_le_bytes());
    Ok(out)
}

struct Header {
    kind: ElementKind,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses an `.npy` payload into a single-frame array `(1, H, W, C)`.
/// 2-D arrays are read as one channel.
pub fn decode_frame(bytes: &[u8]) -> Result<ArrayData, NpzError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpzError::Format("missing npy magic".into()));
    }
    let (header_len, offset) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(NpzError::Format("truncated npy header".into()));
            }
            (u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize, 12)
        }
        v => return Err(NpzError::Format(format!("unsupported npy version {v}"))),
    };
    let end = offset + header_len;
    let text = bytes
        .get(offset..end)
        .and_then(|b| std::str::from_utf8(b).ok())
        .ok_or_else(|| NpzError::Format("truncated npy header".into()))?;
    let header = parse_header(text)?;
    if header.fortran_order {
        return Err(NpzError::Format("Fortran-order arrays are not supported".into()));
    }
    let shape = match header.shape.as_slice() {
        [h, w] => [1, *h, *w, 1],
        [h, w, c] => [1, *h, *w, *c],
        other => return Err(NpzError::Format(format!("expected a 2-D or 3-D array, got shape {other:?}"))),
    };
    ArrayData::from_le_bytes(header.kind, shape, &bytes[end..])
        .ok_or_else(|| NpzError::Format("npy payload size does not match its shape".into()))
}

fn parse_header(text: &str) -> Result<Header, NpzError> {
    let bad = |what: &str| NpzError::Format(format!("malformed npy header ({what}): {text:?}"));
    let value_after = |key: &str| -> Result<&str, NpzError> {
        let pat = format!("'{key}':");
        let at = text.find(&pat).ok_or_else(|| bad(key))?;
        Ok(text[at + pat.len()..].trim_start())
    };

    let descr_text = value_after("descr")?;
    let descr_text = descr_text.strip_prefix('\'').ok_or_else(|| bad("descr"))?;
    let descr_val = &descr_text[..descr_text.find('\'').ok_or_else(|| bad("descr"))?];
    let kind = match descr_val {
        "|u1" | "<u1" | "u1" | "|b1" => ElementKind::U8,
        "<f4" => ElementKind::F32,
        "<f8" => ElementKind::F64,
        other => return Err(NpzError::Format(format!("unsupported dtype '{other}'"))),
    };

    let fortran = value_after("fortran_order")?;
    let fortran_order = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(bad("fortran_order"));
    };

    let shape_text = value_after("shape")?;
    let shape_text = shape_text.strip_prefix('(').ok_or_else(|| bad("shape"))?;
    let close = shape_text.find(')').ok_or_else(|| bad("shape"))?;
    let shape = shape_text[..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("shape")))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Header {
        kind,
        fortran_order,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn header_is_64_byte_aligned_and_exact() {
        let data = ArrayData::F32(Array4::zeros((1, 2, 3, 1)));
        let bytes = encode_frame(&data).unwrap();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        let header = std::str::from_utf8(&bytes[10..10 + header_len]).unwrap();
        assert!(header.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3, 1), }"));
        assert!(header.ends_with('\n'));
        assert_eq!(bytes.len(), 10 + header_len + 2 * 3 * 4);
    }

    #[test]
    fn reads_numpy_written_header_variants() {
        // as written by numpy for np.zeros((2, 2), dtype=np.uint8)
        let dict = "{'descr': '|u1', 'fortran_order': False, 'shape': (2, 2), }";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        let total = 128;
        bytes.extend_from_slice(&((total - 10) as u16).to_le_bytes());
        bytes.extend_from_slice(dict.as_bytes());
        bytes.resize(total - 1, b' ');
        bytes.push(b'\n');
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let a = decode_frame(&bytes).unwrap();
        assert_eq!(a.shape(), [1, 2, 2, 1]);
        assert_eq!(a.to_le_bytes(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn rejects_fortran_and_truncation() {
        let data = ArrayData::U8(Array4::zeros((1, 2, 2, 1)));
        let mut bytes = encode_frame(&data).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("False", "True ");
        assert!(decode_frame(text.as_bytes()).is_err());
        bytes.pop();
        assert!(decode_frame(&bytes).is_err());
        assert!(decode_frame(b"nope").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_is_bit_exact(h in 1usize..6, w in 1usize..6, c in 1usize..5, seed in any::<u64>(), kind in 0u8..3) {
                let n = h * w * c;
                let vals: Vec<u64> = (0..n as u64).map(|i| seed.wrapping_mul(6364136223846793005).wrapping_add(i.wrapping_mul(1442695040888963407))).collect();
                let data = match kind {
                    0 => ArrayData::U8(Array4::from_shape_vec((1, h, w, c), vals.iter().map(|v| (v >> 56) as u8).collect()).unwrap()),
                    1 => ArrayData::F32(Array4::from_shape_vec((1, h, w, c), vals.iter().map(|v| f32::from_bits((v >> 32) as u32)).collect()).unwrap()),
                    _ => ArrayData::F64(Array4::from_shape_vec((1, h, w, c), vals.iter().map(|v| f64::from_bits(*v)).collect()).unwrap()),
                };
                let back = decode_frame(&encode_frame(&data).unwrap()).unwrap();
                prop_assert!(back.bit_eq(&data));
            }
        }
    }
}
