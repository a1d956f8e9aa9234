use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::apportion::Pid;
use crate::config::SystemConfig;
use crate::formats::{parse_attributes, parse_versioned_toml, read_text, FormatError};
use crate::loop_model::{FootprintValue, ReuseClass};
use crate::sensitivity::{compute_alpha, detect_max_ways, PhaseTiming, ProbeAttributes, WayTimeCurve};

pub const MIX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixCategory {
    Light,
    Medium,
    Heavy,
}

impl fmt::Display for MixCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixCategory::Light => "light",
            MixCategory::Medium => "medium",
            MixCategory::Heavy => "heavy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub attrs: ProbeAttributes,
    /// Abstract work units; the phase runs at `work / t(ways)`.
    pub work: f64,
    /// Phase time in seconds against granted ways.
    pub curve: WayTimeCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub pid: Pid,
    pub name: String,
    pub start_ns: f64,
    pub alpha: f64,
    pub max_ways: u32,
    pub phases: Vec<PhaseSpec>,
}

impl ProcessSpec {
    /// Process-level alpha and max-ways from the summed phase curves.
    pub fn derive_sensitivity(phases: &[PhaseSpec], epsilon: f64) -> (f64, u32) {
        let Some(first) = phases.first() else { return (0.0, 2) };
        let total = phases[1..].iter().fold(first.curve.clone(), |acc, p| acc.sum(&p.curve));
        let max_ways = detect_max_ways(&total, epsilon);
        let alpha = compute_alpha(&total, max_ways).unwrap_or(0.0);
        (alpha, max_ways)
    }

    pub fn total_work(&self) -> f64 {
        self.phases.iter().map(|p| p.work).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub name: String,
    pub category: MixCategory,
    pub config: SystemConfig,
    pub processes: Vec<ProcessSpec>,
}

/// Mix document as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixFile {
    pub format_version: u32,
    pub name: String,
    pub category: MixCategory,
    /// Overrides of [`SystemConfig`] fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<toml::Table>,
    #[serde(rename = "process")]
    pub processes: Vec<ProcessEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessEntry {
    pub pid: Pid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub start_ns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ways: Option<u32>,
    /// The phase list runs this many times in a row.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub repeat: u32,
    #[serde(rename = "phase", default)]
    pub phases: Vec<PhaseEntry>,
}

fn one() -> u32 {
    1
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

/// A phase either points at an attribute file or lists its attributes inline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEntry {
    /// Attribute file, relative to the mix file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attrs: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footprint_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reuse: Option<ReuseClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ways: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<PhaseTiming>,
    pub curve: WayTimeCurve,
}

pub fn load_mix(path: &Path, base: &SystemConfig) -> Result<MixSpec, FormatError> {
    let text = read_text(path)?;
    parse_mix(&text, &path.display().to_string(), path.parent(), base)
}

/// Parses a mix document; `dir` resolves attribute-file references.
pub fn parse_mix(text: &str, context: &str, dir: Option<&Path>, base: &SystemConfig) -> Result<MixSpec, FormatError> {
    let file: MixFile = parse_versioned_toml(text, MIX_FORMAT_VERSION, context)?;
    let config = match &file.config {
        Some(t) => base.with_overrides(t).map_err(|e| FormatError::schema(context, e.to_string()))?,
        None => base.clone(),
    };
    if file.processes.is_empty() {
        return Err(FormatError::schema(context, "a mix needs at least one process"));
    }
    let mut pids = BTreeSet::new();
    let mut processes = Vec::with_capacity(file.processes.len());
    for (pi, p) in file.processes.iter().enumerate() {
        let here = format!("{context}: process {} (pid {})", pi + 1, p.pid);
        if !pids.insert(p.pid) {
            return Err(FormatError::schema(here, "duplicate pid"));
        }
        if !p.start_ns.is_finite() || p.start_ns < 0.0 {
            return Err(FormatError::schema(here, "start_ns must be finite and non-negative"));
        }
        if p.phases.is_empty() || p.repeat == 0 {
            return Err(FormatError::schema(here, "a process needs at least one phase"));
        }
        let name = p.name.clone().unwrap_or_else(|| format!("p{}", p.pid));
        let mut once = Vec::with_capacity(p.phases.len());
        for (k, entry) in p.phases.iter().enumerate() {
            let ctx = format!("{here}: phase {}", k + 1);
            once.push(build_phase(entry, &format!("{name}.{k}"), &ctx, dir, &config)?);
        }
        let phases: Vec<PhaseSpec> = (0..p.repeat).flat_map(|_| once.iter().cloned()).collect();
        let (alpha, max_ways) = match (p.alpha, p.max_ways) {
            (Some(a), Some(m)) => (a, m),
            (a, m) => {
                let (da, dm) = ProcessSpec::derive_sensitivity(&phases, config.saturation_epsilon);
                (a.unwrap_or(da), m.unwrap_or(dm))
            }
        };
        if !(alpha >= 0.0) || !(2..=config.ways_per_socket).contains(&max_ways) {
            return Err(FormatError::schema(
                here,
                "alpha must be non-negative and max_ways within 2..=ways_per_socket",
            ));
        }
        processes.push(ProcessSpec { pid: p.pid, name, start_ns: p.start_ns, alpha, max_ways, phases });
    }
    Ok(MixSpec { name: file.name, category: file.category, config, processes })
}

fn build_phase(
    e: &PhaseEntry,
    default_id: &str,
    ctx: &str,
    dir: Option<&Path>,
    config: &SystemConfig,
) -> Result<PhaseSpec, FormatError> {
    let work = e.work.unwrap_or(1.0);
    if !(work > 0.0 && work.is_finite()) {
        return Err(FormatError::schema(ctx, "work must be positive"));
    }
    if !e.curve.is_monotone() {
        return Err(FormatError::schema(ctx, "way-time curve must be non-increasing"));
    }
    let attrs = if let Some(file) = &e.attrs {
        if e.phase_id.is_some() || e.footprint_bytes.is_some() || e.reuse.is_some() || e.timing.is_some() {
            return Err(FormatError::schema(ctx, "`attrs` excludes inline phase attributes"));
        }
        let path = dir.map_or_else(|| Path::new(file).to_path_buf(), |d| d.join(file));
        let mut a = parse_attributes(&read_text(&path)?, &path.display().to_string())?;
        if let Some(v) = e.alpha {
            a.alpha = v;
        }
        if let Some(v) = e.max_ways {
            a.max_ways = v;
        }
        a
    } else {
        let bytes = e.footprint_bytes.ok_or_else(|| FormatError::schema(ctx, "missing `footprint_bytes`"))?;
        let reuse = e.reuse.ok_or_else(|| FormatError::schema(ctx, "missing `reuse`"))?;
        let max_ways = e.max_ways.unwrap_or_else(|| detect_max_ways(&e.curve, config.saturation_epsilon));
        let alpha = match e.alpha {
            Some(a) => a,
            None => compute_alpha(&e.curve, max_ways).map_err(|err| FormatError::schema(ctx, err.to_string()))?,
        };
        let timing =
            e.timing.clone().unwrap_or(PhaseTiming::Fixed { ns: e.curve.time_at(max_ways) * super::NS_PER_CURVE_UNIT });
        ProbeAttributes {
            phase_id: e.phase_id.clone().unwrap_or_else(|| default_id.to_string()),
            footprint: FootprintValue::from_array_bytes([bytes as u128], config.line_size, true),
            reuse,
            timing,
            alpha,
            max_ways,
        }
    };
    if attrs.max_ways < 2 || !(attrs.alpha >= 0.0) {
        return Err(FormatError::schema(ctx, "alpha must be non-negative and max_ways at least 2"));
    }
    attrs.timing.predicted_ns().map_err(|err| FormatError::schema(ctx, err.to_string()))?;
    Ok(PhaseSpec { attrs, work, curve: e.curve.clone() })
}
