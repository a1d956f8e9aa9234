//! On-disk schemas. TOML documents and CSV tables both carry a leading
//! format version.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SystemConfig;
use crate::loop_model::{
    analyze_nest, AccessKind, AffineExpr, BoundValue, FootprintValue, LoopError, LoopLevel, LoopNest, MemoryAccess,
    ReuseClass, Statement, Subscript,
};
use crate::sensitivity::{
    assemble_attributes, AttributeInputs, PhaseProfile, PhaseTiming, ProbeAttributes, WayTimeCurve,
};
use crate::timing::{TimingModel, TrainingSample};

pub const NEST_FORMAT_VERSION: u32 = 1;
pub const ATTRIBUTES_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const TRAINING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("{context}: record {record}: {message}")]
    Record { context: String, record: u64, message: String },
    #[error("{context}: unsupported format_version {found} (expected {expected})")]
    Version { context: String, expected: u32, found: u32 },
    #[error("{context}: {message}")]
    Schema { context: String, message: String },
}

impl FormatError {
    pub fn schema(context: impl Into<String>, message: impl Into<String>) -> Self {
        FormatError::Schema { context: context.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        FormatError::Io { context: context.into(), source }
    }
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|e| FormatError::io(path.display().to_string(), e))
}

/// Parses a TOML document whose `format_version` must equal `expected`.
pub fn parse_versioned_toml<T: DeserializeOwned>(text: &str, expected: u32, context: &str) -> Result<T, FormatError> {
    let value: toml::Table =
        toml::from_str(text).map_err(|e| FormatError::Parse { context: context.into(), message: e.to_string() })?;
    match value.get("format_version").and_then(|v| v.as_integer()) {
        Some(v) if v == expected as i64 => {}
        Some(v) => {
            return Err(FormatError::Version {
                context: context.into(),
                expected,
                found: v.clamp(0, u32::MAX as i64) as u32,
            })
        }
        None => return Err(FormatError::schema(context, "missing integer `format_version`")),
    }
    toml::from_str(text).map_err(|e| FormatError::Parse { context: context.into(), message: e.to_string() })
}

pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("schema types always serialize to TOML")
}

fn csv_error(context: &str, e: csv::Error) -> FormatError {
    let record = e.position().map(|p| p.record());
    match record {
        Some(record) => FormatError::Record { context: context.into(), record, message: e.to_string() },
        None => FormatError::Parse { context: context.into(), message: e.to_string() },
    }
}

/// Writes `#format_version=N`, a header row, then one row per record.
pub fn write_versioned_csv<W: Write, T: Serialize>(mut out: W, version: u32, rows: &[T]) -> Result<(), FormatError> {
    writeln!(out, "#format_version={version}").map_err(|e| FormatError::io("csv output", e))?;
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error("csv output", e))?;
    }
    w.flush().map_err(|e| FormatError::io("csv output", e))
}

/// Reads a table written by [`write_versioned_csv`].
pub fn read_versioned_csv<R: BufRead, T: DeserializeOwned>(
    mut input: R,
    version: u32,
    context: &str,
) -> Result<Vec<T>, FormatError> {
    expect_version_line(&mut input, version, context)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    rdr.deserialize().map(|r| r.map_err(|e| csv_error(context, e))).collect()
}

/// Consumes the `#format_version=N` line.
pub fn expect_version_line<R: BufRead>(input: &mut R, version: u32, context: &str) -> Result<(), FormatError> {
    let mut first = String::new();
    input.read_line(&mut first).map_err(|e| FormatError::io(context, e))?;
    let found = first
        .trim()
        .strip_prefix("#format_version=")
        .ok_or_else(|| FormatError::schema(context, "first line must be `#format_version=N`"))?;
    let found: u32 =
        found.parse().map_err(|_| FormatError::schema(context, format!("bad format version `{found}`")))?;
    if found != version {
        return Err(FormatError::Version { context: context.into(), expected: version, found });
    }
    Ok(())
}

/// Attribute bundle as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributesFile {
    pub format_version: u32,
    pub phase_id: String,
    pub footprint_bytes: u64,
    pub footprint_lines: u64,
    pub exact: bool,
    pub reuse: ReuseClass,
    pub alpha: f64,
    pub max_ways: u32,
    pub timing: PhaseTiming,
}

impl From<&ProbeAttributes> for AttributesFile {
    fn from(a: &ProbeAttributes) -> Self {
        Self {
            format_version: ATTRIBUTES_FORMAT_VERSION,
            phase_id: a.phase_id.clone(),
            footprint_bytes: a.footprint.bytes,
            footprint_lines: a.footprint.lines,
            exact: a.footprint.exact,
            reuse: a.reuse,
            alpha: a.alpha,
            max_ways: a.max_ways,
            timing: a.timing.clone(),
        }
    }
}

impl From<AttributesFile> for ProbeAttributes {
    fn from(f: AttributesFile) -> Self {
        Self {
            phase_id: f.phase_id,
            footprint: FootprintValue { bytes: f.footprint_bytes, lines: f.footprint_lines, exact: f.exact },
            reuse: f.reuse,
            timing: f.timing,
            alpha: f.alpha,
            max_ways: f.max_ways,
        }
    }
}

pub fn attributes_to_toml(a: &ProbeAttributes) -> String {
    to_toml(&AttributesFile::from(a))
}

pub fn parse_attributes(text: &str, context: &str) -> Result<ProbeAttributes, FormatError> {
    let f: AttributesFile = parse_versioned_toml(text, ATTRIBUTES_FORMAT_VERSION, context)?;
    if f.max_ways < 2 || !(f.alpha >= 0.0) {
        return Err(FormatError::schema(context, "alpha must be non-negative and max_ways at least 2"));
    }
    Ok(f.into())
}

/// Loop nest as stored on disk. Subscript coefficients are listed
/// outermost loop first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestFile {
    pub format_version: u32,
    pub name: String,
    #[serde(rename = "loop")]
    pub loops: Vec<LoopEntry>,
    #[serde(rename = "statement", default)]
    pub statements: Vec<StatementEntry>,
    /// Array sizes in bytes, used when an indirect subscript defeats the
    /// footprint analysis.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub arrays: BTreeMap<String, u64>,
    /// Optional timing and way-time profile completing the attribute bundle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<PhaseTiming>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<WayTimeCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopEntry {
    pub index: String,
    pub bound: u64,
    #[serde(default)]
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatementEntry {
    pub depth: usize,
    #[serde(rename = "access", default)]
    pub accesses: Vec<AccessEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessEntry {
    pub array: String,
    #[serde(default)]
    pub constant: i64,
    #[serde(default)]
    pub coefficients: Vec<i64>,
    pub element_size: u32,
    pub kind: AccessKind,
    #[serde(default)]
    pub indirect: bool,
}

impl NestFile {
    pub fn to_nest(&self) -> Result<LoopNest, LoopError> {
        let loops = self
            .loops
            .iter()
            .map(|l| LoopLevel {
                index_name: l.index.clone(),
                upper_bound: if l.estimated { BoundValue::Estimated(l.bound) } else { BoundValue::Concrete(l.bound) },
            })
            .collect();
        let statements = self
            .statements
            .iter()
            .map(|s| {
                let accesses = s
                    .accesses
                    .iter()
                    .map(|a| MemoryAccess {
                        array: a.array.clone(),
                        subscript: if a.indirect {
                            Subscript::Indirect
                        } else {
                            Subscript::Affine(AffineExpr::new(a.constant, a.coefficients.clone()))
                        },
                        element_size: a.element_size,
                        kind: a.kind,
                    })
                    .collect();
                Statement::new(s.depth, accesses)
            })
            .collect();
        LoopNest::new(self.name.clone(), loops, statements)
    }

    pub fn from_nest(nest: &LoopNest) -> Self {
        Self {
            format_version: NEST_FORMAT_VERSION,
            name: nest.name.clone(),
            loops: nest
                .loops
                .iter()
                .map(|l| LoopEntry {
                    index: l.index_name.clone(),
                    bound: l.upper_bound.value(),
                    estimated: l.upper_bound.is_estimated(),
                })
                .collect(),
            statements: nest
                .statements
                .iter()
                .map(|s| StatementEntry {
                    depth: s.depth,
                    accesses: s
                        .accesses
                        .iter()
                        .map(|a| {
                            let (constant, coefficients, indirect) = match &a.subscript {
                                Subscript::Affine(e) => (e.constant, e.coefficients.clone(), false),
                                Subscript::Indirect => (0, Vec::new(), true),
                            };
                            AccessEntry {
                                array: a.array.clone(),
                                constant,
                                coefficients,
                                element_size: a.element_size,
                                kind: a.kind,
                                indirect,
                            }
                        })
                        .collect(),
                })
                .collect(),
            arrays: BTreeMap::new(),
            timing: None,
            curve: None,
        }
    }
}

pub fn parse_nest_file(text: &str, context: &str) -> Result<NestFile, FormatError> {
    let f: NestFile = parse_versioned_toml(text, NEST_FORMAT_VERSION, context)?;
    if let Some(bad) = f.loops.iter().position(|l| l.bound == 0 && !l.estimated) {
        return Err(FormatError::schema(context, format!("loop {} has a zero bound", bad + 1)));
    }
    f.to_nest().map_err(|e| FormatError::schema(context, e.to_string()))?;
    Ok(f)
}

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// A configuration document: `format_version` plus any subset of the
/// [`SystemConfig`] fields, applied on top of `base`.
pub fn parse_config(text: &str, context: &str, base: &SystemConfig) -> Result<SystemConfig, FormatError> {
    let table: toml::Table = parse_versioned_toml(text, CONFIG_FORMAT_VERSION, context)?;
    base.with_overrides(&table).map_err(|e| FormatError::schema(context, e.to_string()))
}

/// Full attribute bundle of a nest file; needs its `timing` and `curve`.
pub fn nest_file_attributes(
    f: &NestFile,
    context: &str,
    config: &SystemConfig,
) -> Result<ProbeAttributes, FormatError> {
    let schema = |e: &dyn std::fmt::Display| FormatError::schema(context, e.to_string());
    let nest = f.to_nest().map_err(|e| schema(&e))?;
    let analysis = analyze_nest(&nest, &f.arrays, config.line_size, config.srd_delta).map_err(|e| schema(&e))?;
    let inputs = AttributeInputs {
        profile: f.curve.clone().map(|curve| PhaseProfile { phase_id: analysis.phase_id.clone(), curve }),
        analysis: Some(analysis),
        timing: f.timing.clone(),
    };
    assemble_attributes(inputs, config.saturation_epsilon).map_err(|e| schema(&e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub depth: usize,
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

pub fn model_to_toml(m: &TimingModel) -> String {
    to_toml(&ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        depth: m.depth(),
        coefficients: m.coefficients.clone(),
        residual: m.fit_residual,
    })
}

pub fn parse_model(text: &str, context: &str) -> Result<TimingModel, FormatError> {
    let f: ModelFile = parse_versioned_toml(text, MODEL_FORMAT_VERSION, context)?;
    if f.coefficients.len() != f.depth + 1 {
        return Err(FormatError::schema(context, "coefficient count must be depth + 1"));
    }
    Ok(TimingModel { coefficients: f.coefficients, fit_residual: f.residual })
}

/// Training table: `#format_version=1`, header `U_1,...,U_n,time_ns`.
pub fn read_training_csv<R: BufRead>(mut input: R, context: &str) -> Result<Vec<TrainingSample>, FormatError> {
    expect_version_line(&mut input, TRAINING_FORMAT_VERSION, context)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers().map_err(|e| csv_error(context, e))?.clone();
    let n = headers.len();
    let expected: Vec<String> = (1..n).map(|i| format!("U_{i}")).chain(["time_ns".to_string()]).collect();
    if n == 0 || headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(FormatError::schema(context, format!("header must be `{}`", expected.join(","))));
    }
    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(context, e))?;
        let bad = |m: String| FormatError::Record { context: context.into(), record: i as u64 + 1, message: m };
        let bounds = rec
            .iter()
            .take(n - 1)
            .map(|v| v.trim().parse::<u64>().map_err(|e| bad(format!("bound `{v}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let t = rec[n - 1].trim();
        let time: f64 = t.parse().map_err(|e| bad(format!("time `{t}`: {e}")))?;
        if !time.is_finite() || time < 0.0 {
            return Err(bad(format!("time {time} must be finite and non-negative")));
        }
        samples.push(TrainingSample::new(bounds, time));
    }
    Ok(samples)
}

pub fn write_training_csv<W: Write>(mut out: W, samples: &[TrainingSample]) -> Result<(), FormatError> {
    let depth = samples.first().map_or(0, |s| s.bounds.len());
    let io = |e| FormatError::io("training output", e);
    writeln!(out, "#format_version={TRAINING_FORMAT_VERSION}").map_err(io)?;
    let header: Vec<String> = (1..=depth).map(|i| format!("U_{i}")).chain(["time_ns".to_string()]).collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for s in samples {
        let row: Vec<String> = s.bounds.iter().map(u64::to_string).chain([s.observed_ns.to_string()]).collect();
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}
