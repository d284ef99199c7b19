//! Semantic class maps.
//!
//! - `semantic/mapping` relabels a class-index (or class-score) dependency
//!   through a lookup table, e.g. from a model's label set to a smaller one.
//! - `semantic/stub` is a procedural segmenter for demos and tests: the hue
//!   circle split into `classes` bins, with low-saturation pixels in class 0.

use ndarray::{Array4, Zip};

use crate::config::{ParamError, RepresentationSpec};
use crate::representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};

use super::color::rgb_to_hsv;

/// `mapping[source] = target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMapping {
    pub mapping: Vec<u8>,
    pub target_classes: u32,
}

impl SemanticMapping {
    pub fn new(mapping: Vec<usize>, target_classes: Option<usize>) -> Result<Self, ParamError> {
        if mapping.is_empty() || mapping.len() > 256 {
            return Err(ParamError::new("mapping", "needs between 1 and 256 entries"));
        }
        let max = *mapping.iter().max().unwrap();
        let target_classes = target_classes.unwrap_or(max + 1);
        if max >= target_classes || target_classes > 256 {
            return Err(ParamError::new(
                "mapping",
                format!("targets must be < target_classes ({target_classes}) and <= 256 classes"),
            ));
        }
        Ok(Self {
            mapping: mapping.into_iter().map(|v| v as u8).collect(),
            target_classes: target_classes as u32,
        })
    }

    pub fn source_classes(&self) -> usize {
        self.mapping.len()
    }

    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let p = &spec.params;
        p.expect_keys(&["mapping", "target_classes"])?;
        let mapping = p
            .usize_list("mapping")?
            .ok_or_else(|| ParamError::new("mapping", "required parameter is missing"))?;
        let target = match p.get("target_classes") {
            Some(_) => Some(p.usize_or("target_classes", 0)?),
            None => None,
        };
        if spec.deps.len() != 1 {
            return Err(ReprError::DependencyMismatch(format!(
                "semantic/mapping takes exactly one dependency, got {}",
                spec.deps.len()
            )));
        }
        Ok(Box::new(SemanticMapping::new(mapping, target)?))
    }

    pub fn apply(&self, indices: &Array4<u8>) -> Result<Array4<u8>, ReprError> {
        if let Some(bad) = indices.iter().find(|&&v| v as usize >= self.mapping.len()) {
            return Err(ReprError::InvalidInput(format!(
                "class index {bad} is outside the mapping's {} source classes",
                self.mapping.len()
            )));
        }
        Ok(indices.mapv(|v| self.mapping[v as usize]))
    }
}

impl Representation for SemanticMapping {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(
            ElementKind::U8,
            1,
            ChannelSemantics::ClassIndex {
                classes: self.target_classes,
            },
        )
    }

    fn check_deps(&self, deps: &[OutputSpec]) -> Result<(), ReprError> {
        match deps {
            [d] if d.semantics.is_semantic() => Ok(()),
            _ => Err(ReprError::DependencyMismatch(format!(
                "semantic/mapping needs one semantic dependency, got {deps:?}"
            ))),
        }
    }

    fn compute(&mut self, _batch: &FrameBatch, deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let [dep] = deps else {
            return Err(ReprError::DependencyMismatch("semantic/mapping expects one dependency".into()));
        };
        let mapped = self.apply(&dep.class_indices()?)?;
        Ok(ReprOutput::new(ArrayData::U8(mapped), self.output_spec().semantics))
    }
}

#[derive(Debug, Clone)]
pub struct HueBins {
    pub classes: u32,
    pub min_saturation: f32,
}

impl HueBins {
    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let p = &spec.params;
        p.expect_keys(&["classes", "min_saturation"])?;
        let classes = p.usize_or("classes", 8)?;
        if !(2..=256).contains(&classes) {
            return Err(ParamError::new("classes", format!("must lie in [2, 256], got {classes}")).into());
        }
        Ok(Box::new(HueBins {
            classes: classes as u32,
            min_saturation: p.f64_or("min_saturation", 0.2)? as f32,
        }))
    }

    pub fn classify(&self, rgb: [u8; 3]) -> u8 {
        let [h, s, _] = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
        if s < self.min_saturation {
            return 0;
        }
        let bins = self.classes - 1;
        1 + ((h * bins as f32) as u32).min(bins - 1) as u8
    }
}

impl Representation for HueBins {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::U8, 1, ChannelSemantics::ClassIndex { classes: self.classes })
    }

    fn compute(&mut self, batch: &FrameBatch, _deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let (n, h, w, _) = batch.frames.dim();
        let mut out = Array4::<u8>::zeros((n, h, w, 1));
        Zip::from(out.lanes_mut(ndarray::Axis(3)))
            .and(batch.frames.lanes(ndarray::Axis(3)))
            .for_each(|mut o, px| o[0] = self.classify([px[0], px[1], px[2]]));
        Ok(ReprOutput::new(ArrayData::U8(out), self.output_spec().semantics))
    }
}
