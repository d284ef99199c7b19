//! `depth/stub`: a stand-in for learned depth experts.
//!
//! - `mode: ramp` (default): `depth(x, y) = y / (H - 1)`, farther toward the bottom.
//! - `mode: file`: frame `i` is read from `<dir>/<i>.npy`, a `(H, W)` or
//!   `(H, W, 1)` float array in [0, 1].

use std::path::PathBuf;

use ndarray::{s, Array4};

use crate::config::{ParamError, RepresentationSpec};
use crate::representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};
use crate::storage::npy;

#[derive(Debug, Clone, PartialEq)]
pub enum DepthStub {
    Ramp,
    File { dir: PathBuf },
}

impl DepthStub {
    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let p = &spec.params;
        p.expect_keys(&["mode", "dir"])?;
        let stub = match p.str_or("mode", "ramp")? {
            "ramp" => DepthStub::Ramp,
            "file" => DepthStub::File {
                dir: PathBuf::from(p.require_str("dir")?),
            },
            other => return Err(ParamError::new("mode", format!("expected 'ramp' or 'file', got '{other}'")).into()),
        };
        Ok(Box::new(stub))
    }

    fn load(dir: &std::path::Path, index: usize, h: usize, w: usize) -> Result<Array4<f32>, ReprError> {
        let path = dir.join(format!("{index}.npy"));
        let bytes = std::fs::read(&path)
            .map_err(|e| ReprError::InvalidInput(format!("depth file {}: {e}", path.display())))?;
        let data = npy::decode_frame(&bytes)?;
        let [_, fh, fw, fc] = data.shape();
        if (fh, fw, fc) != (h, w, 1) {
            return Err(ReprError::InvalidInput(format!(
                "depth file {} has shape ({fh}, {fw}, {fc}), expected ({h}, {w}, 1)",
                path.display()
            )));
        }
        let values = match data {
            ArrayData::F32(a) => a,
            ArrayData::F64(a) => a.mapv(|v| v as f32),
            ArrayData::U8(_) => {
                return Err(ReprError::InvalidInput(format!("depth file {} is not float", path.display())))
            }
        };
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ReprError::InvalidInput(format!(
                "depth file {} has value {bad} outside [0, 1]",
                path.display()
            )));
        }
        Ok(values)
    }
}

impl Representation for DepthStub {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::F32, 1, ChannelSemantics::Depth)
    }

    fn compute(&mut self, batch: &FrameBatch, _deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let (h, w) = batch.frame_size();
        let n = batch.len();
        let out = match &*self {
            DepthStub::Ramp => {
                let denom = h.saturating_sub(1).max(1) as f32;
                Array4::from_shape_fn((n, h, w, 1), |(_, y, _, _)| y as f32 / denom)
            }
            DepthStub::File { dir } => {
                let mut out = Array4::<f32>::zeros((n, h, w, 1));
                for (i, &index) in batch.indices.iter().enumerate() {
                    let frame = Self::load(dir, index, h, w)?;
                    out.slice_mut(s![i..i + 1, .., .., ..]).assign(&frame);
                }
                out
            }
        };
        Ok(ReprOutput::new(ArrayData::F32(out), ChannelSemantics::Depth))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(n: usize, h: usize, w: usize) -> FrameBatch {
        FrameBatch::new((0..n).collect(), Array4::zeros((n, h, w, 3)))
    }

    #[test]
    fn ramp_rows() {
        let out = DepthStub::Ramp.compute(&batch(1, 4, 4), &[]).unwrap();
        let ArrayData::F32(a) = out.data else { panic!() };
        for x in 0..4 {
            let col: Vec<f32> = (0..4).map(|y| a[(0, y, x, 0)]).collect();
            assert_eq!(col, vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
        }
    }

    #[test]
    fn file_round_trip_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let frame = Array4::from_shape_fn((1, 3, 2, 1), |(_, y, x, _)| (y * 2 + x) as f32 / 10.0);
        std::fs::write(dir.path().join("0.npy"), npy::encode_frame(&ArrayData::F32(frame.clone())).unwrap()).unwrap();
        let mut stub = DepthStub::File { dir: dir.path().into() };
        let out = stub.compute(&batch(1, 3, 2), &[]).unwrap();
        assert_eq!(out.data, ArrayData::F32(frame));

        let bad = Array4::from_elem((1, 3, 2, 1), 1.5f32);
        std::fs::write(dir.path().join("1.npy"), npy::encode_frame(&ArrayData::F32(bad)).unwrap()).unwrap();
        let b = FrameBatch::new(vec![1], Array4::zeros((1, 3, 2, 3)));
        let err = stub.compute(&b, &[]).unwrap_err();
        assert!(err.to_string().contains("1.5"), "{err}");

        let missing = FrameBatch::new(vec![7], Array4::zeros((1, 3, 2, 3)));
        assert!(stub.compute(&missing, &[]).is_err());
    }
}
