//! `binary/threshold`: a per-pixel rule over dependency channels producing a
//! `{0, 1}` mask.
//!
//! Channels are named after what the dependencies provide: normals give
//! `v1, v2, v3` (encoded components), depth gives `depth`, class maps give
//! `semantic`, and any single-channel dependency is also reachable by its
//! representation name. The parameters `v2_min`, `v1_v3_max` and `depth_max`
//! are constants usable in the rule. Without a `rule` parameter the
//! safe-landing rule is used, with the `safe_class` factor only when a class
//! map is among the dependencies.

use ndarray::Array4;

use crate::config::{ParamError, RepresentationSpec};
use crate::representation::{
    ArrayData, ChannelSemantics, ElementKind, FrameBatch, OutputSpec, ReprError, ReprOutput, Representation,
};

use super::expr::{parse_expr, Compiled, Expr};

pub const SAFE_LANDING_RULE: &str = "(v2 > v2_min) * ((v1 + v3) < v1_v3_max) * (depth <= depth_max) * safe_class(semantic)";
pub const SAFE_LANDING_RULE_NO_SEMANTIC: &str = "(v2 > v2_min) * ((v1 + v3) < v1_v3_max) * (depth <= depth_max)";

pub const DEFAULT_V2_MIN: f64 = 0.8;
pub const DEFAULT_V1_V3_MAX: f64 = 1.2;
pub const DEFAULT_DEPTH_MAX: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct ThresholdMask {
    /// `None` selects the safe-landing rule.
    rule: Option<Expr>,
    constants: Vec<(String, f64)>,
    safe: Vec<bool>,
    dep_names: Vec<String>,
}

/// Where a rule variable reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Source {
    dep: usize,
    channel: usize,
}

impl ThresholdMask {
    pub fn new(rule: Option<&str>, thresholds: [f64; 3], safe_classes: &[usize], dep_names: Vec<String>) -> Result<Self, ParamError> {
        let rule = rule
            .map(|r| parse_expr(r).map_err(|e| ParamError::new("rule", e.to_string())))
            .transpose()?;
        if let Some(bad) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(ParamError::new("thresholds", format!("must be finite, got {bad}")));
        }
        let max = safe_classes.iter().copied().max().map_or(0, |m| m + 1);
        let mut safe = vec![false; max];
        for &c in safe_classes {
            safe[c] = true;
        }
        Ok(Self {
            rule,
            constants: vec![
                ("v2_min".into(), thresholds[0]),
                ("v1_v3_max".into(), thresholds[1]),
                ("depth_max".into(), thresholds[2]),
            ],
            safe,
            dep_names,
        })
    }

    /// The safe-landing mask with the default thresholds.
    pub fn safe_landing(safe_classes: &[usize], dep_names: Vec<String>) -> Self {
        Self::new(
            None,
            [DEFAULT_V2_MIN, DEFAULT_V1_V3_MAX, DEFAULT_DEPTH_MAX],
            safe_classes,
            dep_names,
        )
        .expect("default rule is valid")
    }

    pub fn from_spec(spec: &RepresentationSpec) -> Result<Box<dyn Representation>, ReprError> {
        let p = &spec.params;
        p.expect_keys(&["rule", "v2_min", "v1_v3_max", "depth_max", "safe_classes"])?;
        let thresholds = [
            p.f64_or("v2_min", DEFAULT_V2_MIN)?,
            p.f64_or("v1_v3_max", DEFAULT_V1_V3_MAX)?,
            p.f64_or("depth_max", DEFAULT_DEPTH_MAX)?,
        ];
        let safe = p.usize_list("safe_classes")?.unwrap_or_default();
        if let Some(bad) = safe.iter().find(|&&c| c > 255) {
            return Err(ParamError::new("safe_classes", format!("class {bad} exceeds 255")).into());
        }
        Ok(Box::new(Self::new(p.str_opt("rule")?, thresholds, &safe, spec.deps.clone())?))
    }

    fn rule_for(&self, has_semantic: bool) -> Expr {
        let expr = match &self.rule {
            Some(e) => e.clone(),
            None if has_semantic => parse_expr(SAFE_LANDING_RULE).expect("valid"),
            None => parse_expr(SAFE_LANDING_RULE_NO_SEMANTIC).expect("valid"),
        };
        expr.substitute(&|name| self.constants.iter().find(|(n, _)| n == name).map(|(_, v)| *v))
    }

    fn source_of(&self, name: &str, deps: &[(ChannelSemantics, usize)]) -> Option<Source> {
        let by_semantics = |wanted: fn(ChannelSemantics) -> bool| deps.iter().position(|(s, _)| wanted(*s));
        let found = match name {
            "v1" | "v2" | "v3" => by_semantics(|s| s == ChannelSemantics::Normals).map(|dep| Source {
                dep,
                channel: (name.as_bytes()[1] - b'1') as usize,
            }),
            "depth" => by_semantics(|s| s == ChannelSemantics::Depth).map(|dep| Source {
                dep,
                channel: 0,
            }),
            "semantic" => by_semantics(ChannelSemantics::is_semantic).map(|dep| Source {
                dep,
                channel: 0,
            }),
            _ => None,
        };
        found.or_else(|| {
            let dep = self.dep_names.iter().position(|n| n == name)?;
            let (sem, channels) = *deps.get(dep)?;
            (channels == 1 || sem.is_semantic()).then_some(Source {
                dep,
                channel: 0,
            })
        })
    }

    fn bind(&self, deps: &[(ChannelSemantics, usize)]) -> Result<(Compiled, Vec<Source>), ReprError> {
        let has_semantic = deps.iter().any(|(s, _)| s.is_semantic());
        let rule = self.rule_for(has_semantic);
        let names: Vec<String> = rule.variables().into_iter().collect();
        let mut sources = Vec::with_capacity(names.len());
        for name in &names {
            sources.push(self.source_of(name, deps).ok_or_else(|| {
                ReprError::DependencyMismatch(format!("rule references '{name}', which no dependency provides"))
            })?);
        }
        let compiled = Compiled::bind(&rule, &|n| names.iter().position(|x| x == n))
            .map_err(|e| ReprError::Param(ParamError::new("rule", e.to_string())))?;
        Ok((compiled, sources))
    }
}

impl Representation for ThresholdMask {
    fn output_spec(&self) -> OutputSpec {
        OutputSpec::new(ElementKind::U8, 1, ChannelSemantics::Mask)
    }

    fn check_deps(&self, deps: &[OutputSpec]) -> Result<(), ReprError> {
        let described: Vec<_> = deps.iter().map(|d| (d.semantics, d.channels.unwrap_or(0))).collect();
        self.bind(&described).map(|_| ())
    }

    fn compute(&mut self, batch: &FrameBatch, deps: &[&ReprOutput]) -> Result<ReprOutput, ReprError> {
        let described: Vec<_> = deps.iter().map(|d| (d.semantics, d.data.channels())).collect();
        let (rule, sources) = self.bind(&described)?;
        let mut planes: Vec<Array4<f64>> = Vec::with_capacity(deps.len());
        for (dep, (sem, _)) in deps.iter().zip(&described) {
            if dep.frames() != batch.len() {
                return Err(ReprError::DependencyMismatch(format!(
                    "dependency has {} frames, batch has {}",
                    dep.frames(),
                    batch.len()
                )));
            }
            planes.push(if sem.is_semantic() {
                dep.class_indices()?.mapv(f64::from)
            } else {
                dep.data.to_f64()
            });
        }
        let (h, w) = batch.frame_size();
        let mut slots = vec![0.0; sources.len()];
        let out = Array4::from_shape_fn((batch.len(), h, w, 1), |(n, y, x, _)| {
            for (slot, src) in slots.iter_mut().zip(&sources) {
                *slot = planes[src.dep][(n, y, x, src.channel)];
            }
            u8::from(rule.eval(&slots, &self.safe) != 0.0)
        });
        Ok(ReprOutput::new(ArrayData::U8(out), ChannelSemantics::Mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixel_inputs(v: [f32; 3], depth: f32, class: u8) -> (ReprOutput, ReprOutput, ReprOutput) {
        let normals = ReprOutput::new(
            ArrayData::F32(Array4::from_shape_vec((1, 1, 1, 3), v.to_vec()).unwrap()),
            ChannelSemantics::Normals,
        );
        let depth = ReprOutput::new(ArrayData::F32(Array4::from_elem((1, 1, 1, 1), depth)), ChannelSemantics::Depth);
        let sem = ReprOutput::new(
            ArrayData::U8(Array4::from_elem((1, 1, 1, 1), class)),
            ChannelSemantics::ClassIndex { classes: 8 },
        );
        (normals, depth, sem)
    }

    fn eval(mask: &mut ThresholdMask, v: [f32; 3], depth: f32, class: u8) -> u8 {
        let (n, d, s) = pixel_inputs(v, depth, class);
        let batch = FrameBatch::new(vec![0], Array4::zeros((1, 1, 1, 3)));
        let out = mask.compute(&batch, &[&n, &d, &s]).unwrap();
        let ArrayData::U8(a) = out.data else { panic!() };
        a[(0, 0, 0, 0)]
    }

    fn names() -> Vec<String> {
        vec!["normals".into(), "depth".into(), "sem".into()]
    }

    #[test]
    fn safe_landing_examples() {
        let mut m = ThresholdMask::safe_landing(&[1, 4], names());
        assert_eq!(eval(&mut m, [0.1, 0.9, 0.5], 0.5, 1), 1);
        assert_eq!(eval(&mut m, [0.1, 0.9, 0.5], 1.0, 1), 0);
        assert_eq!(eval(&mut m, [0.1, 0.9, 0.5], 0.5, 2), 0);
        assert_eq!(eval(&mut m, [0.1, 0.79, 0.5], 0.5, 4), 0);
        assert_eq!(eval(&mut m, [0.75, 0.9, 0.5], 0.5, 4), 0);
        assert_eq!(eval(&mut m, [0.1, 0.9, 0.5], 0.9, 4), 1);
    }

    #[test]
    fn custom_rule_by_dependency_name() {
        let mut m = ThresholdMask::new(Some("depth * 2 > 1.5"), [0.8, 1.2, 0.9], &[], names()).unwrap();
        assert_eq!(eval(&mut m, [0.0; 3], 0.8, 0), 1);
        assert_eq!(eval(&mut m, [0.0; 3], 0.7, 0), 0);
        let mut m = ThresholdMask::new(Some("sem == 3"), [0.8, 1.2, 0.9], &[], names()).unwrap();
        assert_eq!(eval(&mut m, [0.0; 3], 0.0, 3), 1);
    }

    #[test]
    fn missing_channel_is_an_error() {
        let m = ThresholdMask::safe_landing(&[1], vec!["normals".into()]);
        let deps = [OutputSpec::new(ElementKind::F32, 3, ChannelSemantics::Normals)];
        let err = m.check_deps(&deps).unwrap_err();
        assert!(err.to_string().contains("depth"), "{err}");
        let ok = [
            OutputSpec::new(ElementKind::F32, 3, ChannelSemantics::Normals),
            OutputSpec::new(ElementKind::F32, 1, ChannelSemantics::Depth),
        ];
        m.check_deps(&ok).unwrap();
    }

    #[test]
    fn bad_rule_is_a_param_error() {
        assert!(ThresholdMask::new(Some("v1 >"), [0.8, 1.2, 0.9], &[], vec![]).is_err());
        assert!(ThresholdMask::new(None, [f64::NAN, 1.2, 0.9], &[], vec![]).is_err());
    }
}
