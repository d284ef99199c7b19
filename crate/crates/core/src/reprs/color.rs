//! `color/rgb` and `color/hsv`.

use ndarray::{Array4, Zip};

use crate::config::RepresentationSpec;
use crate::representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};

/// The decoded frames, unchanged.
#[derive(Debug, Default)]
pub struct Rgb;

impl Rgb {
    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        spec.params.expect_keys(&[])?;
        Ok(Box::new(Rgb))
    }
}

impl Representation for Rgb {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::U8, 3, ChannelSemantics::Rgb)
    }

    fn compute(&mut self, batch: &FrameBatch, _deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        Ok(ReprOutput::new(ArrayData::U8(batch.frames.clone()), ChannelSemantics::Rgb))
    }
}

/// HSV with every channel in [0, 1]. Hue is 0 for grays.
#[derive(Debug, Default)]
pub struct Hsv;

impl Hsv {
    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        spec.params.expect_keys(&[])?;
        Ok(Box::new(Hsv))
    }
}

/// Converts one 8-bit RGB pixel.
pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> [f32; 3] {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let v = max;
    if max == min {
        return [0.0, 0.0, v as f32];
    }
    let delta = max - min;
    let s = delta / max;
    let h = if max == r {
        (g - b) / delta
    } else if max == g {
        2.0 + (b - r) / delta
    } else {
        4.0 + (r - g) / delta
    };
    let h = (h / 6.0).rem_euclid(1.0);
    [h as f32, s as f32, v as f32]
}

impl Representation for Hsv {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::F32, 3, ChannelSemantics::Hsv)
    }

    fn compute(&mut self, batch: &FrameBatch, _deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let (n, h, w, _) = batch.frames.dim();
        let mut out = Array4::<f32>::zeros((n, h, w, 3));
        Zip::from(out.lanes_mut(ndarray::Axis(3)))
            .and(batch.frames.lanes(ndarray::Axis(3)))
            .for_each(|mut o, px| {
                let hsv = rgb_to_hsv(px[0], px[1], px[2]);
                o[0] = hsv[0];
                o[1] = hsv[1];
                o[2] = hsv[2];
            });
        Ok(ReprOutput::new(ArrayData::F32(out), ChannelSemantics::Hsv))
    }
}
