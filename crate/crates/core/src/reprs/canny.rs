//! `edges/canny`: luma, Gaussian smoothing, Sobel gradients, non-maximum
//! suppression over four directions, then hysteresis with 8-connectivity.
//!
//! Borders replicate the edge pixel. Thresholds apply to the L2 Sobel
//! magnitude of the 0..255 luma image. A pixel survives suppression when it is
//! not smaller than either neighbor along its gradient direction, so a
//! symmetric step yields a two-pixel band.

use std::collections::VecDeque;

use ndarray::{s, Array2, Array4, ArrayView3};

use crate::config::{ParamError, RepresentationSpec};
use crate::representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};

pub const DEFAULT_LOW: f64 = 50.0;
pub const DEFAULT_HIGH: f64 = 100.0;
pub const DEFAULT_SIGMA: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct Canny {
    pub low: f32,
    pub high: f32,
    pub sigma: f32,
}

impl Canny {
    pub fn new(low: f64, high: f64, sigma: f64) -> Result<Self, ParamError> {
        if !(low.is_finite() && high.is_finite() && low >= 0.0 && low < high) {
            return Err(ParamError::new(
                "low",
                format!("thresholds must satisfy 0 <= low < high, got low={low}, high={high}"),
            ));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(ParamError::new("sigma", format!("must be >= 0, got {sigma}")));
        }
        Ok(Self {
            low: low as f32,
            high: high as f32,
            sigma: sigma as f32,
        })
    }

    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let p = &spec.params;
        p.expect_keys(&["low", "high", "sigma"])?;
        Ok(Box::new(Canny::new(
            p.f64_or("low", DEFAULT_LOW)?,
            p.f64_or("high", DEFAULT_HIGH)?,
            p.f64_or("sigma", DEFAULT_SIGMA)?,
        )?))
    }

    /// Edge map of one RGB frame `(H, W, 3)`: 255 on edges, 0 elsewhere.
    pub fn edges(&self, frame: ArrayView3<u8>) -> Array2<u8> {
        let luma = frame.map_axis(ndarray::Axis(2), |px| {
            0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32
        });
        let smooth = gaussian_blur(&luma, self.sigma);
        let (mag, dir) = sobel(&smooth);
        let thin = non_max_suppression(&mag, &dir);
        hysteresis(&thin, self.low, self.high)
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i32;
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Separable Gaussian blur with replicated borders. `sigma == 0` is a no-op.
pub fn gaussian_blur(img: &Array2<f32>, sigma: f32) -> Array2<f32> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dim();
    let mut tmp = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * img[(y, clamp_idx(x as isize + j as isize - r, w))];
            }
            tmp[(y, x)] = acc;
        }
    }
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * tmp[(clamp_idx(y as isize + j as isize - r, h), x)];
            }
            out[(y, x)] = acc;
        }
    }
    out
}

/// Gradient magnitude and direction bin (0: horizontal gradient, 1: 45°,
/// 2: vertical, 3: 135°).
fn sobel(img: &Array2<f32>) -> (Array2<f32>, Array2<u8>) {
    let (h, w) = img.dim();
    let at = |y: isize, x: isize| img[(clamp_idx(y, h), clamp_idx(x, w))];
    let mut mag = Array2::<f32>::zeros((h, w));
    let mut dir = Array2::<u8>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            let (yu, xu) = (y as usize, x as usize);
            mag[(yu, xu)] = (gx * gx + gy * gy).sqrt();
            // angle folded to [0, 180)
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[(yu, xu)] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }
    (mag, dir)
}

fn non_max_suppression(mag: &Array2<f32>, dir: &Array2<u8>) -> Array2<f32> {
    let (h, w) = mag.dim();
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[(y as usize, x as usize)]
        }
    };
    let mut out = Array2::<f32>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let m = mag[(y, x)];
            if m == 0.0 {
                continue;
            }
            let (dy, dx) = match dir[(y, x)] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let (yi, xi) = (y as isize, x as isize);
            if m >= at(yi + dy, xi + dx) && m >= at(yi - dy, xi - dx) {
                out[(y, x)] = m;
            }
        }
    }
    out
}

fn hysteresis(mag: &Array2<f32>, low: f32, high: f32) -> Array2<u8> {
    let (h, w) = mag.dim();
    let mut out = Array2::<u8>::zeros((h, w));
    let mut queue = VecDeque::new();
    for ((y, x), &m) in mag.indexed_iter() {
        if m >= high {
            out[(y, x)] = 255;
            queue.push_back((y, x));
        }
    }
    while let Some((y, x)) = queue.pop_front() {
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if out[(ny, nx)] == 0 && mag[(ny, nx)] >= low {
                    out[(ny, nx)] = 255;
                    queue.push_back((ny, nx));
                }
            }
        }
    }
    out
}

impl Representation for Canny {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::U8, 1, ChannelSemantics::Edges)
    }

    fn compute(&mut self, batch: &FrameBatch, _deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let (n, h, w, _) = batch.frames.dim();
        let mut out = Array4::<u8>::zeros((n, h, w, 1));
        for i in 0..n {
            let e = self.edges(batch.frames.slice(s![i, .., .., ..]));
            out.slice_mut(s![i, .., .., 0]).assign(&e);
        }
        Ok(ReprOutput::new(ArrayData::U8(out), ChannelSemantics::Edges))
    }
}
