//! Pipeline configuration: a `globals` block plus named representations.
//!
//! The accepted grammar is documented in `docs/config.md`. In short:
//!
//! ```yaml
//! globals: {batch_size: 10}
//! representations: {
//!   rgb: {type: color/rgb, deps: [], params: {}},
//!   hsv: {type: color/hsv, deps: [rgb], params: {batch_size: 5}}
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::representation::Registry;

pub const DEFAULT_BATCH_SIZE: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("duplicate representation name '{0}'")]
    DuplicateName(String),
    #[error("representation '{name}' has unknown type '{kind}'")]
    UnknownKind { name: String, kind: String },
    #[error("representation '{name}' depends on '{dep}', which is not defined")]
    UndefinedDependency { name: String, dep: String },
    #[error("{context}: batch size must be a positive integer, got {value}")]
    NonPositiveBatchSize { context: String, value: String },
}

/// How a representation's frames are exported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputLayout {
    #[default]
    BinaryOnly,
    BinaryAndImage,
    /// Images only. Such a representation cannot be read back from disk by
    /// dependents in another process or run.
    ImageOnly,
}

impl OutputLayout {
    pub fn has_binary(self) -> bool {
        !matches!(self, OutputLayout::ImageOnly)
    }

    pub fn has_image(self) -> bool {
        !matches!(self, OutputLayout::BinaryOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalConfig {
    pub batch_size: usize,
    pub output_dir_layout: OutputLayout,
    pub compression: bool,
    /// `(height, width)`; `None` keeps the video size.
    pub output_size: Option<(usize, usize)>,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            output_dir_layout: OutputLayout::BinaryOnly,
            compression: false,
            output_size: None,
        }
    }
}

/// Per-representation export override.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExportOverride {
    pub layout: Option<OutputLayout>,
    pub compression: Option<bool>,
}

/// A parameter value, typed as parsed.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Bool(bool),
    Str(String),
    List(Vec<ParamValue>),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Bool(v) => write!(f, "{v}"),
            ParamValue::Str(v) => write!(f, "{v:?}"),
            ParamValue::List(items) => {
                write!(f, "[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, "]")
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("parameter '{key}': {message}")]
pub struct ParamError {
    pub key: String,
    pub message: String,
}

impl ParamError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

/// Opaque parameter map handed to a representation, which validates it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params(pub BTreeMap<String, ParamValue>);

impl Params {
    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.0.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: ParamValue) {
        self.0.insert(key.into(), value);
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ParamError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => as_f64(key, v),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ParamError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => as_usize(key, v),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, ParamError> {
        match self.get(key) {
            None => Ok(default),
            Some(ParamValue::Bool(b)) => Ok(*b),
            Some(other) => Err(ParamError::new(key, format!("expected a boolean, got {other}"))),
        }
    }

    pub fn str_opt(&self, key: &str) -> Result<Option<&str>, ParamError> {
        match self.get(key) {
            None => Ok(None),
            Some(ParamValue::Str(s)) => Ok(Some(s)),
            Some(other) => Err(ParamError::new(key, format!("expected a string, got {other}"))),
        }
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str, ParamError> {
        Ok(self.str_opt(key)?.unwrap_or(default))
    }

    pub fn require_str(&self, key: &str) -> Result<&str, ParamError> {
        self.str_opt(key)?
            .ok_or_else(|| ParamError::new(key, "required parameter is missing"))
    }

    pub fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, ParamError> {
        match self.get(key) {
            None => Ok(None),
            Some(ParamValue::List(items)) => items
                .iter()
                .map(|v| as_usize(key, v))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(other) => Err(ParamError::new(key, format!("expected a list, got {other}"))),
        }
    }

    /// A list of strings, or a single string split on whitespace.
    pub fn str_list(&self, key: &str) -> Result<Option<Vec<String>>, ParamError> {
        match self.get(key) {
            None => Ok(None),
            Some(ParamValue::Str(s)) => Ok(Some(s.split_whitespace().map(str::to_string).collect())),
            Some(ParamValue::List(items)) => items
                .iter()
                .map(|v| match v {
                    ParamValue::Str(s) => Ok(s.clone()),
                    ParamValue::Int(i) => Ok(i.to_string()),
                    ParamValue::Float(x) => Ok(x.to_string()),
                    other => Err(ParamError::new(key, format!("expected strings, got {other}"))),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(other) => Err(ParamError::new(key, format!("expected a list, got {other}"))),
        }
    }

    /// Rejects any key not in `allowed`.
    pub fn expect_keys(&self, allowed: &[&str]) -> Result<(), ParamError> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ParamError::new(
                k,
                format!("unknown parameter (accepted: {})", allowed.join(", ")),
            )),
            None => Ok(()),
        }
    }
}

fn as_f64(key: &str, v: &ParamValue) -> Result<f64, ParamError> {
    match v {
        ParamValue::Int(i) => Ok(*i as f64),
        ParamValue::Float(x) => Ok(*x),
        other => Err(ParamError::new(key, format!("expected a number, got {other}"))),
    }
}

fn as_usize(key: &str, v: &ParamValue) -> Result<usize, ParamError> {
    match v {
        ParamValue::Int(i) if *i >= 0 => Ok(*i as usize),
        other => Err(ParamError::new(
            key,
            format!("expected a non-negative integer, got {other}"),
        )),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationSpec {
    pub name: String,
    pub kind: String,
    pub deps: Vec<String>,
    pub params: Params,
    pub batch_size_override: Option<usize>,
    pub export: ExportOverride,
}

impl RepresentationSpec {
    pub fn new(name: impl Into<String>, kind: impl Into<String>, deps: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            deps: deps.iter().map(|d| d.to_string()).collect(),
            params: Params::default(),
            batch_size_override: None,
            export: ExportOverride::default(),
        }
    }

    pub fn with_param(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key, value);
        self
    }

    pub fn effective_batch_size(&self, globals: &GlobalConfig) -> usize {
        self.batch_size_override.unwrap_or(globals.batch_size)
    }

    pub fn effective_layout(&self, globals: &GlobalConfig) -> OutputLayout {
        self.export.layout.unwrap_or(globals.output_dir_layout)
    }

    pub fn effective_compression(&self, globals: &GlobalConfig) -> bool {
        self.export.compression.unwrap_or(globals.compression)
    }
}

/// A parsed configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub globals: GlobalConfig,
    pub representations: Vec<RepresentationSpec>,
}

impl Config {
    pub fn spec(&self, name: &str) -> Option<&RepresentationSpec> {
        self.representations.iter().find(|s| s.name == name)
    }
}

// Raw document shapes. Unknown keys outside `params` are rejected.

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    #[serde(default)]
    globals: Option<RawGlobals>,
    #[serde(default)]
    representations: Option<serde_yaml::Mapping>,
}

#[derive(Deserialize, Serialize, Default)]
#[serde(deny_unknown_fields)]
struct RawGlobals {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_size: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_dir_layout: Option<OutputLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compression: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_size: Option<Vec<i64>>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRepresentation {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    deps: Vec<String>,
    #[serde(default)]
    params: serde_yaml::Mapping,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_size: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    export: Option<RawExport>,
}

#[derive(Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawExport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<OutputLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compression: Option<bool>,
}

fn syntax_error(err: serde_yaml::Error) -> ConfigError {
    let (line, column) = err
        .location()
        .map(|l| (l.line(), l.column()))
        .unwrap_or((0, 0));
    let message = err.to_string();
    // serde_yaml reports duplicate keys as a generic error.
    const DUPLICATE: &str = "duplicate entry with key ";
    if let Some(rest) = message.find(DUPLICATE).map(|at| &message[at + DUPLICATE.len()..]) {
        let name = rest
            .split(" at ")
            .next()
            .unwrap_or(rest)
            .trim_matches('"')
            .to_string();
        return ConfigError::DuplicateName(name);
    }
    ConfigError::Syntax {
        line,
        column,
        message,
    }
}

fn positive_batch(context: &str, value: i64) -> Result<usize, ConfigError> {
    if value >= 1 {
        Ok(value as usize)
    } else {
        Err(ConfigError::NonPositiveBatchSize {
            context: context.to_string(),
            value: value.to_string(),
        })
    }
}

fn yaml_to_param(key: &str, value: &serde_yaml::Value) -> Result<ParamValue, ConfigError> {
    use serde_yaml::Value;
    Ok(match value {
        Value::Bool(b) => ParamValue::Bool(*b),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                ParamValue::Int(i)
            } else if let Some(x) = n.as_f64() {
                ParamValue::Float(x)
            } else {
                return Err(ConfigError::Invalid(format!(
                    "parameter '{key}': number {n} out of range"
                )));
            }
        }
        Value::String(s) => ParamValue::Str(s.clone()),
        Value::Sequence(items) => ParamValue::List(
            items
                .iter()
                .map(|v| yaml_to_param(key, v))
                .collect::<Result<_, _>>()?,
        ),
        Value::Tagged(tagged) => yaml_to_param(key, &tagged.value)?,
        Value::Null | Value::Mapping(_) => {
            return Err(ConfigError::Invalid(format!(
                "parameter '{key}': expected a scalar, string or list"
            )))
        }
    })
}

fn param_to_yaml(value: &ParamValue) -> serde_yaml::Value {
    use serde_yaml::Value;
    match value {
        ParamValue::Int(i) => Value::Number((*i).into()),
        ParamValue::Float(x) => Value::Number((*x).into()),
        ParamValue::Bool(b) => Value::Bool(*b),
        ParamValue::Str(s) => Value::String(s.clone()),
        ParamValue::List(items) => Value::Sequence(items.iter().map(param_to_yaml).collect()),
    }
}

/// Parses and validates a configuration document against the kinds known to `registry`.
pub fn parse_config(document: &str, registry: &Registry) -> Result<Config, ConfigError> {
    parse_config_with(document, |kind| registry.contains(kind))
}

/// Like [`parse_config`], with an arbitrary predicate deciding which kinds exist.
pub fn parse_config_with(
    document: &str,
    is_known_kind: impl Fn(&str) -> bool,
) -> Result<Config, ConfigError> {
    let raw: RawDocument = if document.trim().is_empty() {
        RawDocument {
            globals: None,
            representations: None,
        }
    } else {
        serde_yaml::from_str(document).map_err(syntax_error)?
    };

    let raw_globals = raw.globals.unwrap_or_default();
    let mut globals = GlobalConfig::default();
    if let Some(b) = raw_globals.batch_size {
        globals.batch_size = positive_batch("globals", b)?;
    }
    if let Some(layout) = raw_globals.output_dir_layout {
        globals.output_dir_layout = layout;
    }
    if let Some(c) = raw_globals.compression {
        globals.compression = c;
    }
    if let Some(size) = raw_globals.output_size {
        match size.as_slice() {
            [h, w] if *h >= 1 && *w >= 1 => globals.output_size = Some((*h as usize, *w as usize)),
            _ => {
                return Err(ConfigError::Invalid(
                    "globals.output_size must be [height, width] with both >= 1".into(),
                ))
            }
        }
    }

    let mut specs = Vec::new();
    let mut seen = BTreeSet::new();
    for (key, value) in raw.representations.unwrap_or_default() {
        let name = match key {
            serde_yaml::Value::String(s) => s,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "representation names must be strings, got {other:?}"
                )))
            }
        };
        if !seen.insert(name.clone()) {
            return Err(ConfigError::DuplicateName(name));
        }
        let raw_repr: RawRepresentation = serde_yaml::from_value(value)
            .map_err(|e| ConfigError::Invalid(format!("representation '{name}': {e}")))?;
        if !is_known_kind(&raw_repr.kind) {
            return Err(ConfigError::UnknownKind {
                name,
                kind: raw_repr.kind,
            });
        }

        let mut params = Params::default();
        let mut batch_size_override = None;
        for (pk, pv) in &raw_repr.params {
            let pk = match pk {
                serde_yaml::Value::String(s) => s.clone(),
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "representation '{name}': parameter names must be strings, got {other:?}"
                    )))
                }
            };
            // `batch_size` inside params is the per-representation batch override.
            if pk == "batch_size" {
                let b = match pv.as_i64() {
                    Some(b) => b,
                    None => {
                        return Err(ConfigError::NonPositiveBatchSize {
                            context: format!("representation '{name}'"),
                            value: format!("{pv:?}"),
                        })
                    }
                };
                batch_size_override = Some(positive_batch(&format!("representation '{name}'"), b)?);
                continue;
            }
            params.insert(pk.clone(), yaml_to_param(&pk, pv)?);
        }
        if let Some(b) = raw_repr.batch_size {
            if batch_size_override.is_some() {
                return Err(ConfigError::Invalid(format!(
                    "representation '{name}': batch_size given both at top level and in params"
                )));
            }
            batch_size_override = Some(positive_batch(&format!("representation '{name}'"), b)?);
        }
        let export = raw_repr
            .export
            .map(|e| ExportOverride {
                layout: e.layout,
                compression: e.compression,
            })
            .unwrap_or_default();

        specs.push(RepresentationSpec {
            name,
            kind: raw_repr.kind,
            deps: raw_repr.deps,
            params,
            batch_size_override,
            export,
        });
    }

    for spec in &specs {
        for dep in &spec.deps {
            if !seen.contains(dep) {
                return Err(ConfigError::UndefinedDependency {
                    name: spec.name.clone(),
                    dep: dep.clone(),
                });
            }
        }
    }

    Ok(Config {
        globals,
        representations: specs,
    })
}

/// Serializes a configuration back to the document syntax accepted by [`parse_config`].
pub fn serialize_config(config: &Config) -> String {
    let g = &config.globals;
    let globals = RawGlobals {
        batch_size: Some(g.batch_size as i64),
        output_dir_layout: Some(g.output_dir_layout),
        compression: Some(g.compression),
        output_size: g.output_size.map(|(h, w)| vec![h as i64, w as i64]),
    };
    let mut reprs = serde_yaml::Mapping::new();
    for spec in &config.representations {
        let mut params = serde_yaml::Mapping::new();
        for (k, v) in &spec.params.0 {
            params.insert(serde_yaml::Value::String(k.clone()), param_to_yaml(v));
        }
        let export = if spec.export == ExportOverride::default() {
            None
        } else {
            Some(RawExport {
                layout: spec.export.layout,
                compression: spec.export.compression,
            })
        };
        let raw = RawRepresentation {
            kind: spec.kind.clone(),
            deps: spec.deps.clone(),
            params,
            batch_size: spec.batch_size_override.map(|b| b as i64),
            export,
        };
        reprs.insert(
            serde_yaml::Value::String(spec.name.clone()),
            serde_yaml::to_value(raw).expect("representation serializes"),
        );
    }
    let doc = RawDocument {
        globals: Some(globals),
        representations: Some(reprs),
    };
    serde_yaml::to_string(&doc).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn known(kind: &str) -> bool {
        matches!(kind, "color/rgb" | "color/hsv" | "edges/canny")
    }

    fn parse(doc: &str) -> Result<Config, ConfigError> {
        parse_config_with(doc, known)
    }

    const SAMPLE_DOCUMENT: &str = r#"
globals: {batch_size: 10}
representations: {
  rgb: {type: color/rgb, deps: [], params: {}},
  hsv: {type: color/hsv, deps: [rgb], params: {batch_size: 5}}
}
"#;

    #[test]
    fn flow_style_snippet_overrides_batch_size() {
        let cfg = parse(SAMPLE_DOCUMENT).unwrap();
        assert_eq!(cfg.globals.batch_size, 10);
        assert_eq!(cfg.representations.len(), 2);
        let rgb = cfg.spec("rgb").unwrap();
        let hsv = cfg.spec("hsv").unwrap();
        assert_eq!(rgb.effective_batch_size(&cfg.globals), 10);
        assert_eq!(hsv.effective_batch_size(&cfg.globals), 5);
        assert_eq!(hsv.deps, vec!["rgb"]);
        assert!(hsv.params.0.is_empty());
    }

    #[test]
    fn empty_representations() {
        let cfg = parse("representations: {}").unwrap();
        assert!(cfg.representations.is_empty());
        assert_eq!(cfg.globals, GlobalConfig::default());
        assert_eq!(cfg.globals.output_dir_layout, OutputLayout::BinaryOnly);
        assert!(!cfg.globals.compression);
    }

    #[test]
    fn undefined_dependency_is_named() {
        let doc = "representations: {rgb: {type: color/rgb}, hsv: {type: color/hsv, deps: [rgbx]}}";
        match parse(doc) {
            Err(ConfigError::UndefinedDependency { name, dep }) => {
                assert_eq!(name, "hsv");
                assert_eq!(dep, "rgbx");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_name() {
        let doc = "representations:\n  rgb: {type: color/rgb}\n  rgb: {type: color/rgb}\n";
        let r = parse(doc);
        assert!(matches!(&r, Err(ConfigError::DuplicateName(n)) if n == "rgb"), "{r:?}");
    }

    #[test]
    fn unknown_kind() {
        let doc = "representations: {x: {type: flow/raft}}";
        assert!(matches!(parse(doc), Err(ConfigError::UnknownKind { kind, .. }) if kind == "flow/raft"));
    }

    #[test]
    fn non_positive_batch() {
        assert!(matches!(
            parse("globals: {batch_size: 0}"),
            Err(ConfigError::NonPositiveBatchSize { .. })
        ));
        let doc = "representations: {rgb: {type: color/rgb, batch_size: -2}}";
        assert!(matches!(parse(doc), Err(ConfigError::NonPositiveBatchSize { .. })));
    }

    #[test]
    fn syntax_error_reports_position() {
        match parse("globals: {batch_size: 10\nrepresentations: [") {
            Err(ConfigError::Syntax { line, .. }) => assert!(line >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_key_rejected_but_params_pass_through() {
        assert!(parse("globals: {}\nextras: 1").is_err());
        assert!(parse("representations: {rgb: {type: color/rgb, colour: red}}").is_err());
        let cfg = parse("representations: {rgb: {type: color/rgb, params: {anything: [1, 2.5, x, true]}}}")
            .unwrap();
        assert_eq!(
            cfg.spec("rgb").unwrap().params.get("anything"),
            Some(&ParamValue::List(vec![
                ParamValue::Int(1),
                ParamValue::Float(2.5),
                ParamValue::Str("x".into()),
                ParamValue::Bool(true)
            ]))
        );
    }

    #[test]
    fn globals_and_export_override() {
        let doc = r#"
globals:
  batch_size: 4
  output_dir_layout: binary_and_image
  compression: true
  output_size: [540, 960]
representations:
  rgb:
    type: color/rgb
    export: {layout: binary_only, compression: false}
"#;
        let cfg = parse(doc).unwrap();
        assert_eq!(cfg.globals.output_size, Some((540, 960)));
        let rgb = cfg.spec("rgb").unwrap();
        assert_eq!(rgb.effective_layout(&cfg.globals), OutputLayout::BinaryOnly);
        assert!(!rgb.effective_compression(&cfg.globals));
        assert!(parse("globals: {output_size: [0, 5]}").is_err());
    }

    #[test]
    fn parsing_is_pure() {
        assert_eq!(parse(SAMPLE_DOCUMENT).unwrap(), parse(SAMPLE_DOCUMENT).unwrap());
    }

    #[test]
    fn typed_param_getters() {
        let mut p = Params::default();
        p.insert("low", ParamValue::Int(3));
        p.insert("sigma", ParamValue::Float(1.5));
        p.insert("name", ParamValue::Str("x".into()));
        assert_eq!(p.f64_or("low", 0.0).unwrap(), 3.0);
        assert_eq!(p.f64_or("missing", 7.0).unwrap(), 7.0);
        assert!(p.usize_or("sigma", 0).is_err());
        assert!(p.f64_or("name", 0.0).is_err());
        assert!(p.expect_keys(&["low", "sigma"]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn ident() -> impl Strategy<Value = String> {
            "[a-z][a-z0-9_]{0,6}"
        }

        fn param_value() -> impl Strategy<Value = ParamValue> {
            let leaf = prop_oneof![
                any::<i32>().prop_map(|i| ParamValue::Int(i as i64)),
                (-1.0e6f64..1.0e6).prop_map(ParamValue::Float),
                any::<bool>().prop_map(ParamValue::Bool),
                "[a-zA-Z0-9 _./-]{0,10}".prop_map(ParamValue::Str),
            ];
            leaf.prop_recursive(2, 8, 4, |inner| {
                prop::collection::vec(inner, 0..4).prop_map(ParamValue::List)
            })
        }

        fn config() -> impl Strategy<Value = Config> {
            let globals = (
                1usize..64,
                prop_oneof![
                    Just(OutputLayout::BinaryOnly),
                    Just(OutputLayout::BinaryAndImage)
                ],
                any::<bool>(),
                prop::option::of((1usize..2000, 1usize..2000)),
            )
                .prop_map(|(batch_size, output_dir_layout, compression, output_size)| {
                    GlobalConfig {
                        batch_size,
                        output_dir_layout,
                        compression,
                        output_size,
                    }
                });
            let reprs = prop::collection::btree_map(
                ident(),
                (
                    prop::sample::select(vec!["color/rgb", "color/hsv", "edges/canny"]),
                    prop::collection::btree_map(ident(), param_value(), 0..4),
                    prop::option::of(1usize..100),
                    prop::option::of(any::<bool>()),
                    prop::collection::vec(any::<prop::sample::Index>(), 0..3),
                ),
                0..6,
            );
            (globals, reprs).prop_map(|(globals, reprs)| {
                let names: Vec<String> = reprs.keys().cloned().collect();
                let representations = reprs
                    .into_iter()
                    .enumerate()
                    .map(|(i, (name, (kind, mut params, batch, compression, dep_idx)))| {
                        params.remove("batch_size");
                        // deps point at earlier names only
                        let mut deps: Vec<String> = if i == 0 {
                            vec![]
                        } else {
                            dep_idx.iter().map(|ix| names[ix.index(i)].clone()).collect()
                        };
                        deps.dedup();
                        RepresentationSpec {
                            name,
                            kind: kind.to_string(),
                            deps,
                            params: Params(params),
                            batch_size_override: batch,
                            export: ExportOverride {
                                layout: None,
                                compression,
                            },
                        }
                    })
                    .collect();
                Config {
                    globals,
                    representations,
                }
            })
        }

        proptest! {
            #[test]
            fn serialize_then_parse_round_trips(cfg in config()) {
                let text = serialize_config(&cfg);
                let back = parse(&text).unwrap();
                prop_assert_eq!(back, cfg);
            }

            #[test]
            fn effective_batch_is_override_or_global(cfg in config()) {
                for spec in &cfg.representations {
                    let expected = spec.batch_size_override.unwrap_or(cfg.globals.batch_size);
                    prop_assert_eq!(spec.effective_batch_size(&cfg.globals), expected);
                }
            }
        }
    }
}
