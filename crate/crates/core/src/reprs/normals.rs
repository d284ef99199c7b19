//! `normals/svd`: camera-space surface normals from a depth map.
//!
//! Intrinsics come from a horizontal field of view: `f = (W / 2) / tan(fov / 2)`
//! with the principal point at the image center. Every pixel of the
//! `(2r + 1)²` window around a pixel (clipped at the borders) with a finite,
//! positive depth `d` is unprojected to `((x - cx) d / f, (y - cy) d / f, d)`.
//! The normal is the right singular vector of the centered point matrix with
//! the smallest singular value, flipped so `n_z > 0`, and stored as `(n + 1) / 2`.
//! Threshold rules call these encoded components `v1, v2, v3`; they are not
//! angles.
//!
//! Windows with fewer than `min_valid` points produce the sentinel
//! `(0.5, 0.5, 0.5)` and are counted in the frame stat `degenerate_pixels`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use ndarray::{s, Array2, Array3, Array4, ArrayView2};

use crate::config::{ParamError, RepresentationSpec};
use crate::representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};

pub const SENTINEL: f32 = 0.5;
pub const DEGENERATE_STAT: &str = "degenerate_pixels";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalsParams {
    pub window_radius: usize,
    pub fov_deg: f64,
    pub min_valid: usize,
}

impl Default for NormalsParams {
    fn default() -> Self {
        Self {
            window_radius: 2,
            fov_deg: 75.0,
            min_valid: 6,
        }
    }
}

impl NormalsParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.window_radius < 1 {
            return Err(ParamError::new("window_radius", "must be >= 1"));
        }
        let full = (2 * self.window_radius + 1).pow(2);
        if self.min_valid < 3 || self.min_valid > full {
            return Err(ParamError::new(
                "min_valid",
                format!("must lie in [3, {full}] for window_radius {}", self.window_radius),
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(ParamError::new("fov_deg", format!("must lie in (0, 180), got {}", self.fov_deg)));
        }
        Ok(())
    }

    /// Focal length in pixels for an image `width` pixels wide.
    pub fn focal(&self, width: usize) -> f64 {
        (width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan()
    }
}

#[derive(Debug, Clone)]
pub struct SvdNormals {
    pub params: NormalsParams,
}

impl SvdNormals {
    pub fn new(params: NormalsParams) -> Result<Self, ParamError> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let p = &spec.params;
        p.expect_keys(&["window_radius", "fov_deg", "min_valid"])?;
        let d = NormalsParams::default();
        let params = NormalsParams {
            window_radius: p.usize_or("window_radius", d.window_radius)?,
            fov_deg: p.f64_or("fov_deg", d.fov_deg)?,
            min_valid: p.usize_or("min_valid", d.min_valid)?,
        };
        if spec.deps.len() != 1 {
            return Err(ReprError::DependencyMismatch(format!(
                "normals/svd takes exactly one depth dependency, got {}",
                spec.deps.len()
            )));
        }
        Ok(Box::new(SvdNormals::new(params)?))
    }

    /// Encoded normals `(H, W, 3)` for one depth map, plus the degenerate pixel count.
    pub fn normals(&self, depth: ArrayView2<f32>) -> (Array3<f32>, usize) {
        let (h, w) = depth.dim();
        let f = self.params.focal(w);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let points: Array2<Option<Vector3<f64>>> = Array2::from_shape_fn((h, w), |(y, x)| {
            let d = depth[(y, x)] as f64;
            (d.is_finite() && d > 0.0).then(|| Vector3::new((x as f64 - cx) * d / f, (y as f64 - cy) * d / f, d))
        });
        let r = self.params.window_radius;
        let mut out = Array3::<f32>::from_elem((h, w, 3), SENTINEL);
        let mut degenerate = 0;
        let mut window: Vec<Vector3<f64>> = Vec::with_capacity((2 * r + 1).pow(2));
        for y in 0..h {
            for x in 0..w {
                window.clear();
                for wy in y.saturating_sub(r)..(y + r + 1).min(h) {
                    for wx in x.saturating_sub(r)..(x + r + 1).min(w) {
                        if let Some(p) = points[(wy, wx)] {
                            window.push(p);
                        }
                    }
                }
                match fit_normal(&window, self.params.min_valid) {
                    Some(n) => {
                        for k in 0..3 {
                            out[(y, x, k)] = ((n[k] + 1.0) / 2.0) as f32;
                        }
                    }
                    None => degenerate += 1,
                }
            }
        }
        (out, degenerate)
    }
}

/// Unit plane normal of `points` with `n_z >= 0`, or `None` when there are
/// fewer than `min_valid` points.
pub fn fit_normal(points: &[Vector3<f64>], min_valid: usize) -> Option<Vector3<f64>> {
    if points.len() < min_valid.max(3) {
        return None;
    }
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    // The right singular vectors of the centered N x 3 matrix A are those of
    // the 3 x 3 scatter A^T A, with squared singular values.
    let mut scatter = Matrix3::<f64>::zeros();
    for p in points {
        let c = p - mean;
        scatter += c * c.transpose();
    }
    let svd = scatter.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut n: Vector3<f64> = v_t.row(min_idx).transpose();
    let norm = n.norm();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    n /= norm;
    if n.z < 0.0 {
        n = -n;
    }
    Some(n)
}

impl Representation for SvdNormals {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::F32, 3, ChannelSemantics::Normals)
    }

    fn check_deps(&self, deps: &[OutputSpec]) -> Result<(), ReprError> {
        match deps {
            [d] if d.channels == Some(1) && d.kind != ElementKind::U8 => Ok(()),
            _ => Err(ReprError::DependencyMismatch(format!(
                "normals/svd needs one single-channel float depth input, got {deps:?}"
            ))),
        }
    }

    fn compute(&mut self, batch: &FrameBatch, deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let [depth] = deps else {
            return Err(ReprError::DependencyMismatch("normals/svd expects one dependency".into()));
        };
        let depth = depth.data.to_f64().mapv(|v| v as f32);
        let (n, h, w, _) = depth.dim();
        if n != batch.len() {
            return Err(ReprError::DependencyMismatch(format!("depth has {n} frames, batch has {}", batch.len())));
        }
        let mut out = Array4::<f32>::zeros((n, h, w, 3));
        let mut stats = Vec::with_capacity(n);
        for i in 0..n {
            let (normals, degenerate) = self.normals(depth.slice(s![i, .., .., 0]));
            out.slice_mut(s![i, .., .., ..]).assign(&normals);
            stats.push(BTreeMap::from([(DEGENERATE_STAT.to_string(), degenerate as f64)]));
        }
        let mut result = ReprOutput::new(ArrayData::F32(out), ChannelSemantics::Normals);
        result.frame_stats = stats;
        Ok(result)
    }
}
