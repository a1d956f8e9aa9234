//! Fractional way apportioning and the allocation engine.

mod bitmask;
mod engine;
mod log;

pub use bitmask::{first_fit, generate_bitmask, largest_free_run, BitmaskError, CapacityBitmask};
pub use engine::{Admission, AllocError, AllocationDecision, Allocator, ClosState, ProcessState};
pub use log::{read_log_csv, write_log_csv, AllocationRecord, LogEvent, LOG_FORMAT_VERSION};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::loop_model::ReuseClass;
use crate::sensitivity::ProbeAttributes;

pub type Pid = u32;

/// Tolerance used when comparing a fraction sum against 1.
pub const SCENARIO_TOLERANCE: f64 = 1e-9;

/// Footprint in bytes scaled down for stream phases.
pub fn adjusted_footprint(attrs: &ProbeAttributes, config: &SystemConfig) -> f64 {
    let scale = match attrs.reuse {
        ReuseClass::Reuse => 1.0,
        ReuseClass::Stream => config.scaling_factor_stream,
    };
    attrs.footprint.bytes as f64 * scale
}

/// Each process's share of the socket: its adjusted footprint over the sum.
/// All-zero input splits evenly.
pub fn cache_fractions(adjusted: &[(Pid, f64)]) -> BTreeMap<Pid, f64> {
    let total: f64 = adjusted.iter().map(|(_, a)| a).sum();
    adjusted
        .iter()
        .map(|&(pid, a)| {
            let f = if total > 0.0 { a / total } else { 1.0 / adjusted.len() as f64 };
            (pid, f)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancyScenario {
    /// Fractions add up to the whole cache.
    FullDisjoint,
    /// Fractions over-subscribe the cache.
    Overlapping,
    /// Part of the cache is unclaimed.
    Underutilized,
}

impl OccupancyScenario {
    pub fn as_str(self) -> &'static str {
        match self {
            OccupancyScenario::FullDisjoint => "full_disjoint",
            OccupancyScenario::Overlapping => "overlapping",
            OccupancyScenario::Underutilized => "underutilized",
        }
    }
}

impl fmt::Display for OccupancyScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OccupancyScenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full_disjoint" => Ok(Self::FullDisjoint),
            "overlapping" => Ok(Self::Overlapping),
            "underutilized" => Ok(Self::Underutilized),
            _ => Err(format!("unknown scenario `{s}`")),
        }
    }
}

pub fn classify_scenario(fractions: impl IntoIterator<Item = f64>) -> OccupancyScenario {
    let sum: f64 = fractions.into_iter().sum();
    if (sum - 1.0).abs() <= SCENARIO_TOLERANCE {
        OccupancyScenario::FullDisjoint
    } else if sum > 1.0 {
        OccupancyScenario::Overlapping
    } else {
        OccupancyScenario::Underutilized
    }
}

/// `min(max_ways, max(1, round_half_up(fraction * ways)))`.
pub fn required_ways(fraction: f64, ways_per_socket: u32, max_ways: u32) -> u32 {
    let rounded = (fraction.clamp(0.0, 1.0) * ways_per_socket as f64 + 0.5).floor() as u32;
    rounded.max(1).min(max_ways.max(1)).min(ways_per_socket)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_model::FootprintValue;
    use crate::sensitivity::PhaseTiming;

    fn attrs(bytes: u64, reuse: ReuseClass) -> ProbeAttributes {
        ProbeAttributes {
            phase_id: "p".into(),
            footprint: FootprintValue { bytes, lines: bytes.div_ceil(64), exact: true },
            reuse,
            timing: PhaseTiming::Fixed { ns: 1.0 },
            alpha: 0.0,
            max_ways: 2,
        }
    }

    #[test]
    fn adjusted() {
        let c = SystemConfig::default();
        assert!((adjusted_footprint(&attrs(400, ReuseClass::Stream), &c) - 40.0).abs() < 1e-12);
        assert_eq!(adjusted_footprint(&attrs(100, ReuseClass::Reuse), &c), 100.0);
        assert_eq!(adjusted_footprint(&attrs(0, ReuseClass::Stream), &c), 0.0);
    }

    #[test]
    fn fractions() {
        let f = cache_fractions(&[(1, 100.0), (2, 40.0), (3, 60.0)]);
        assert!((f[&1] - 0.5).abs() < 1e-12 && (f[&2] - 0.2).abs() < 1e-12 && (f[&3] - 0.3).abs() < 1e-12);
        assert_eq!(cache_fractions(&[(7, 3.0)])[&7], 1.0);
        let z = cache_fractions(&[(1, 0.0), (2, 0.0)]);
        assert_eq!((z[&1], z[&2]), (0.5, 0.5));
    }

    #[test]
    fn scenarios() {
        assert_eq!(classify_scenario([0.5, 0.5]), OccupancyScenario::FullDisjoint);
        assert_eq!(classify_scenario([1.2]), OccupancyScenario::Overlapping);
        assert_eq!(classify_scenario([0.7]), OccupancyScenario::Underutilized);
    }

    #[test]
    fn required() {
        assert_eq!(required_ways(0.5, 11, 8), 6);
        assert_eq!(required_ways(0.01, 11, 4), 1);
        assert_eq!(required_ways(0.9, 11, 4), 4);
    }
}
