//! Discrete-event co-execution of process mixes under an allocation policy.
//!
//! Execution is work based: a phase carries abstract work and a way-time
//! curve, and runs at `work / t(ways)` where `ways` is what the policy lets
//! it use after contention inside its partition.

mod engine;
mod mix;
mod policy;
mod trace;

pub use engine::{run_mix, ProcessOutcome, SimError, SimReport};
pub use mix::{load_mix, parse_mix, MixCategory, MixSpec, PhaseSpec, ProcessSpec, MIX_FORMAT_VERSION};
pub use policy::Policy;
pub use trace::{read_trace_csv, replay_trace, write_trace_csv, EventKind, PhaseEvent, TRACE_FORMAT_VERSION};

use crate::apportion::CapacityBitmask;
use crate::config::SystemConfig;
use crate::loop_model::ReuseClass;

/// Way-time curves are profiled in seconds; the engine runs in ns.
pub const NS_PER_CURVE_UNIT: f64 = 1e9;

/// Guards `floor` against sums like `0.999...` that are 1 in exact arithmetic.
const SHARE_SLACK: f64 = 1e-9;

/// A process's view of its partition.
#[derive(Debug, Clone, Copy)]
pub struct Occupant {
    pub mask: CapacityBitmask,
    pub reuse: ReuseClass,
}

/// Ways a process can use given everyone else on its socket.
///
/// Stream phases see their whole mask. A reuse phase gets each of its ways
/// divided among the reuse phases whose masks include that way, floored to
/// a whole way and at least 1. With identical masks this is
/// `max(1, width / reuse_sharers)`.
pub fn effective_ways(me: &Occupant, socket: &[Occupant]) -> u32 {
    match me.reuse {
        ReuseClass::Stream => me.mask.popcount(),
        ReuseClass::Reuse => {
            let share: f64 = (me.mask.start()..me.mask.end())
                .map(|w| {
                    let n = socket.iter().filter(|o| o.reuse == ReuseClass::Reuse && o.mask.contains(w)).count();
                    1.0 / n.max(1) as f64
                })
                .sum();
            ((share + SHARE_SLACK).floor() as u32).max(1)
        }
    }
}

/// Time of a phase at `ways` in ns: flat beyond its max-ways, and a 1-way
/// grant behaves like a direct-mapped cache at `t(2) * penalty`.
pub fn phase_time(phase: &PhaseSpec, ways: u32, config: &SystemConfig) -> f64 {
    let seconds = if ways <= 1 {
        phase.curve.time_at(2) * config.directly_mapped_penalty
    } else {
        phase.curve.time_at(ways.min(phase.attrs.max_ways.max(2)))
    };
    seconds * NS_PER_CURVE_UNIT
}

/// Work units per ns.
pub fn phase_speed(phase: &PhaseSpec, ways: u32, config: &SystemConfig) -> f64 {
    phase.work / phase_time(phase, ways, config)
}

/// Completion time of a process running alone on an unpartitioned socket.
pub fn run_unmixed(process: &ProcessSpec, config: &SystemConfig) -> f64 {
    process.phases.iter().map(|p| phase_time(p, config.ways_per_socket, config)).sum()
}
