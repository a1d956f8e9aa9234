//! Cache sensitivity of a phase: way-time curve, alpha and max-ways, and the
//! attribute bundle a probe broadcasts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loop_model::{FootprintValue, NestAnalysis, ReuseClass};
use crate::timing::{predict_phase_time, TimingError, TimingModel};

/// Curve points may rise by this relative amount and still count as monotone.
pub const MONOTONE_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensitivityError {
    #[error("way-time curve has no point at {0} ways")]
    CurveIncomplete(u32),
    #[error("invalid way-time curve: {0}")]
    InvalidCurve(String),
    #[error("attribute bundle is missing its {0}")]
    AttributesIncomplete(&'static str),
    #[error("phase id mismatch: analysis `{analysis}` vs profile `{profile}`")]
    PhaseMismatch { analysis: String, profile: String },
    #[error(transparent)]
    Timing(#[from] TimingError),
}

/// Execution time in seconds measured at several way allocations.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct WayTimeCurve {
    points: BTreeMap<u32, f64>,
}

impl WayTimeCurve {
    pub fn new(points: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, SensitivityError> {
        let mut map = BTreeMap::new();
        for (w, t) in points {
            if w < 2 {
                return Err(SensitivityError::InvalidCurve(format!("way count {w} below 2")));
            }
            if !t.is_finite() || t <= 0.0 {
                return Err(SensitivityError::InvalidCurve(format!("time {t} at {w} ways")));
            }
            if map.insert(w, t).is_some() {
                return Err(SensitivityError::InvalidCurve(format!("duplicate point at {w} ways")));
            }
        }
        if map.is_empty() {
            return Err(SensitivityError::InvalidCurve("no points".into()));
        }
        Ok(Self { points: map })
    }

    pub fn points(&self) -> &BTreeMap<u32, f64> {
        &self.points
    }

    pub fn get(&self, ways: u32) -> Option<f64> {
        self.points.get(&ways).copied()
    }

    pub fn max_defined(&self) -> u32 {
        *self.points.keys().next_back().expect("curve is never empty")
    }

    /// Time at `ways`, linear between points and flat outside them.
    pub fn time_at(&self, ways: u32) -> f64 {
        if let Some(t) = self.get(ways) {
            return t;
        }
        let below = self.points.range(..ways).next_back();
        let above = self.points.range(ways..).next();
        match (below, above) {
            (Some((&w0, &t0)), Some((&w1, &t1))) => t0 + (t1 - t0) * (ways - w0) as f64 / (w1 - w0) as f64,
            (Some((_, &t)), None) | (None, Some((_, &t))) => t,
            (None, None) => unreachable!("curve is never empty"),
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.points.values().zip(self.points.values().skip(1)).all(|(a, b)| *b <= a * (1.0 + MONOTONE_SLACK))
    }

    /// Pointwise sum of two curves over the union of their way counts.
    pub fn sum(&self, other: &Self) -> Self {
        let keys: std::collections::BTreeSet<u32> = self.points.keys().chain(other.points.keys()).copied().collect();
        Self { points: keys.into_iter().map(|w| (w, self.time_at(w) + other.time_at(w))).collect() }
    }
}

impl TryFrom<Vec<(u32, f64)>> for WayTimeCurve {
    type Error = SensitivityError;

    fn try_from(v: Vec<(u32, f64)>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<WayTimeCurve> for Vec<(u32, f64)> {
    fn from(c: WayTimeCurve) -> Self {
        c.points.into_iter().collect()
    }
}

/// Sum of `|dt| / dw` over consecutive curve points in `(2, max_ways]`.
pub fn compute_alpha(curve: &WayTimeCurve, max_ways: u32) -> Result<f64, SensitivityError> {
    let max_ways = max_ways.max(2);
    for w in [2, max_ways] {
        if curve.get(w).is_none() {
            return Err(SensitivityError::CurveIncomplete(w));
        }
    }
    let pts: Vec<(u32, f64)> = curve.points.range(2..=max_ways).map(|(&w, &t)| (w, t)).collect();
    Ok(pts.windows(2).fold(0.0, |acc, p| acc + (p[1].1 - p[0].1).abs() / (p[1].0 - p[0].0) as f64))
}

/// Smallest way count after which no point improves by `epsilon` or more.
pub fn detect_max_ways(curve: &WayTimeCurve, epsilon: f64) -> u32 {
    let pts: Vec<(u32, f64)> = curve.points.iter().map(|(&w, &t)| (w, t)).collect();
    let mut saturated_at = pts[0].0;
    for p in pts.windows(2) {
        let (t_prev, t) = (p[0].1, p[1].1);
        if (t_prev - t) / t_prev >= epsilon {
            saturated_at = p[1].0;
        }
    }
    saturated_at.max(2)
}

/// How long a phase runs when it has its full allocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PhaseTiming {
    Fixed { ns: f64 },
    Model { coefficients: Vec<f64>, bounds: Vec<u64> },
}

impl PhaseTiming {
    pub fn predicted_ns(&self) -> Result<f64, TimingError> {
        match self {
            PhaseTiming::Fixed { ns } => Ok(ns.max(0.0)),
            PhaseTiming::Model { coefficients, bounds } => {
                if coefficients.is_empty() {
                    return Err(TimingError::ArityError { expected: bounds.len() + 1, got: 0 });
                }
                predict_phase_time(&TimingModel::new(coefficients.clone()), bounds)
            }
        }
    }
}

/// Everything a probe reports for one outermost loop nest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeAttributes {
    pub phase_id: String,
    pub footprint: FootprintValue,
    pub reuse: ReuseClass,
    pub timing: PhaseTiming,
    pub alpha: f64,
    pub max_ways: u32,
}

/// Offline profile of one phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseProfile {
    pub phase_id: String,
    pub curve: WayTimeCurve,
}

#[derive(Debug, Clone, Default)]
pub struct AttributeInputs {
    pub analysis: Option<NestAnalysis>,
    pub timing: Option<PhaseTiming>,
    pub profile: Option<PhaseProfile>,
}

pub fn assemble_attributes(inputs: AttributeInputs, epsilon: f64) -> Result<ProbeAttributes, SensitivityError> {
    let analysis = inputs.analysis.ok_or(SensitivityError::AttributesIncomplete("loop analysis"))?;
    let timing = inputs.timing.ok_or(SensitivityError::AttributesIncomplete("timing"))?;
    let profile = inputs.profile.ok_or(SensitivityError::AttributesIncomplete("way-time curve"))?;
    if analysis.phase_id != profile.phase_id {
        return Err(SensitivityError::PhaseMismatch { analysis: analysis.phase_id, profile: profile.phase_id });
    }
    timing.predicted_ns()?;
    let max_ways = detect_max_ways(&profile.curve, epsilon);
    let alpha = compute_alpha(&profile.curve, max_ways)?;
    Ok(ProbeAttributes {
        phase_id: analysis.phase_id,
        footprint: analysis.footprint,
        reuse: analysis.reuse,
        timing,
        alpha,
        max_ways,
    })
}
