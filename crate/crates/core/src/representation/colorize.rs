//! Default `make_image` rules.
//!
//! - 3-channel `uint8`: copied unchanged.
//! - Edges and masks (1-channel `uint8`): edges as gray, masks scaled by 255.
//! - Class indices: [`PALETTE`], wrapping for indices past its end. Class
//!   scores are argmaxed first.
//! - 3-channel floats in [0, 1] (hsv, normals): `round(v * 255)`.
//! - 1-channel floats: the "hot" colormap, black at 0 and white at 1.
//! - Anything else: first channel through the "hot" colormap, values clamped to [0, 1].

use ndarray::{Array3, Axis};

use super::{ArrayData, ChannelSemantics, ReprError, ReprOutput};

/// Fixed class palette (RGB).
pub const PALETTE: [[u8; 3]; 20] = [
    [0, 0, 0],
    [0, 255, 0],
    [0, 127, 0],
    [255, 255, 0],
    [255, 255, 255],
    [255, 0, 0],
    [0, 0, 255],
    [0, 255, 255],
    [127, 127, 63],
    [255, 0, 255],
    [128, 64, 0],
    [64, 0, 128],
    [0, 128, 128],
    [128, 128, 128],
    [255, 128, 0],
    [128, 0, 0],
    [0, 0, 128],
    [192, 192, 255],
    [255, 192, 192],
    [64, 64, 64],
];

pub fn palette_color(class: u8) -> [u8; 3] {
    PALETTE[class as usize % PALETTE.len()]
}

/// "hot" colormap: red ramps first, then green, then blue.
pub fn hot(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0 * v), ch(3.0 * v - 1.0), ch(3.0 * v - 2.0)]
}

fn unit_to_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

pub fn default_image(frame: &ReprOutput) -> Result<Array3<u8>, ReprError> {
    let [n, h, w, c] = frame.data.shape();
    if n != 1 {
        return Err(ReprError::InvalidInput(format!("make_image expects one frame, got {n}")));
    }
    if frame.semantics.is_semantic() {
        let idx = frame.class_indices()?;
        let plane = idx.index_axis(Axis(0), 0);
        return Ok(Array3::from_shape_fn((h, w, 3), |(y, x, k)| {
            palette_color(plane[(y, x, 0)])[k]
        }));
    }
    match (&frame.data, c) {
        (ArrayData::U8(a), 3) => Ok(a.index_axis(Axis(0), 0).to_owned()),
        (ArrayData::U8(a), 1) => {
            let scale = if frame.semantics == ChannelSemantics::Mask { 255 } else { 1 };
            let plane = a.index_axis(Axis(0), 0);
            Ok(Array3::from_shape_fn((h, w, 3), |(y, x, _)| {
                plane[(y, x, 0)].saturating_mul(scale)
            }))
        }
        (data, 3) => {
            let f = data.to_f64();
            Ok(Array3::from_shape_fn((h, w, 3), |(y, x, k)| unit_to_u8(f[(0, y, x, k)])))
        }
        (data, _) => {
            let f = data.to_f64();
            Ok(Array3::from_shape_fn((h, w, 3), |(y, x, k)| hot(f[(0, y, x, 0)])[k]))
        }
    }
}
