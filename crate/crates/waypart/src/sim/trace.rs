use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::engine::SimError;
use crate::apportion::{Admission, AllocationRecord, Allocator, Pid};
use crate::config::SystemConfig;
use crate::formats::{read_versioned_csv, write_versioned_csv, FormatError};
use crate::loop_model::{FootprintValue, ReuseClass};
use crate::sensitivity::{PhaseTiming, ProbeAttributes};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Declaration order is the tie-break order at equal time and pid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ProcessStart,
    PhaseEnd,
    PhaseStart,
    ProcessEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseEvent {
    ProcessStart { time_ns: f64, pid: Pid, alpha: f64, max_ways: u32 },
    PhaseStart { time_ns: f64, pid: Pid, attrs: ProbeAttributes },
    PhaseEnd { time_ns: f64, pid: Pid },
    ProcessEnd { time_ns: f64, pid: Pid },
}

impl PhaseEvent {
    pub fn time_ns(&self) -> f64 {
        match self {
            PhaseEvent::ProcessStart { time_ns, .. }
            | PhaseEvent::PhaseStart { time_ns, .. }
            | PhaseEvent::PhaseEnd { time_ns, .. }
            | PhaseEvent::ProcessEnd { time_ns, .. } => *time_ns,
        }
    }

    pub fn pid(&self) -> Pid {
        match self {
            PhaseEvent::ProcessStart { pid, .. }
            | PhaseEvent::PhaseStart { pid, .. }
            | PhaseEvent::PhaseEnd { pid, .. }
            | PhaseEvent::ProcessEnd { pid, .. } => *pid,
        }
    }

    pub fn kind(&self) -> EventKind {
        match self {
            PhaseEvent::ProcessStart { .. } => EventKind::ProcessStart,
            PhaseEvent::PhaseStart { .. } => EventKind::PhaseStart,
            PhaseEvent::PhaseEnd { .. } => EventKind::PhaseEnd,
            PhaseEvent::ProcessEnd { .. } => EventKind::ProcessEnd,
        }
    }
}

/// Sorts by (time, pid, kind); stable for equal keys.
pub(crate) fn sort_events(events: &mut [PhaseEvent]) {
    events
        .sort_by(|a, b| a.time_ns().total_cmp(&b.time_ns()).then(a.pid().cmp(&b.pid())).then(a.kind().cmp(&b.kind())));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TraceRow {
    time_ns: f64,
    pid: Pid,
    kind: EventKind,
    alpha: Option<f64>,
    max_ways: Option<u32>,
    phase_id: Option<String>,
    footprint_bytes: Option<u64>,
    footprint_lines: Option<u64>,
    footprint_exact: Option<bool>,
    reuse: Option<ReuseClass>,
    predicted_ns: Option<f64>,
}

impl TraceRow {
    fn bare(time_ns: f64, pid: Pid, kind: EventKind) -> Self {
        Self {
            time_ns,
            pid,
            kind,
            alpha: None,
            max_ways: None,
            phase_id: None,
            footprint_bytes: None,
            footprint_lines: None,
            footprint_exact: None,
            reuse: None,
            predicted_ns: None,
        }
    }
}

/// Phase timing is written as its predicted duration.
pub fn write_trace_csv<W: Write>(out: W, events: &[PhaseEvent]) -> Result<(), FormatError> {
    let rows: Vec<TraceRow> = events
        .iter()
        .map(|e| {
            let mut row = TraceRow::bare(e.time_ns(), e.pid(), e.kind());
            match e {
                PhaseEvent::ProcessStart { alpha, max_ways, .. } => {
                    row.alpha = Some(*alpha);
                    row.max_ways = Some(*max_ways);
                }
                PhaseEvent::PhaseStart { attrs, .. } => {
                    row.alpha = Some(attrs.alpha);
                    row.max_ways = Some(attrs.max_ways);
                    row.phase_id = Some(attrs.phase_id.clone());
                    row.footprint_bytes = Some(attrs.footprint.bytes);
                    row.footprint_lines = Some(attrs.footprint.lines);
                    row.footprint_exact = Some(attrs.footprint.exact);
                    row.reuse = Some(attrs.reuse);
                    row.predicted_ns = Some(attrs.timing.predicted_ns().unwrap_or(0.0));
                }
                _ => {}
            }
            row
        })
        .collect();
    write_versioned_csv(out, TRACE_FORMAT_VERSION, &rows)
}

pub fn read_trace_csv<R: BufRead>(input: R, context: &str) -> Result<Vec<PhaseEvent>, FormatError> {
    let rows: Vec<TraceRow> = read_versioned_csv(input, TRACE_FORMAT_VERSION, context)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let record = i as u64 + 1;
            let missing = |field: &str| FormatError::Record {
                context: context.into(),
                record,
                message: format!("{:?} event needs `{field}`", r.kind),
            };
            if !r.time_ns.is_finite() || r.time_ns < 0.0 {
                return Err(FormatError::Record { context: context.into(), record, message: "bad time_ns".into() });
            }
            Ok(match r.kind {
                EventKind::ProcessStart => PhaseEvent::ProcessStart {
                    time_ns: r.time_ns,
                    pid: r.pid,
                    alpha: r.alpha.ok_or_else(|| missing("alpha"))?,
                    max_ways: r.max_ways.ok_or_else(|| missing("max_ways"))?,
                },
                EventKind::PhaseStart => PhaseEvent::PhaseStart {
                    time_ns: r.time_ns,
                    pid: r.pid,
                    attrs: ProbeAttributes {
                        phase_id: r.phase_id.clone().ok_or_else(|| missing("phase_id"))?,
                        footprint: FootprintValue {
                            bytes: r.footprint_bytes.ok_or_else(|| missing("footprint_bytes"))?,
                            lines: r.footprint_lines.ok_or_else(|| missing("footprint_lines"))?,
                            exact: r.footprint_exact.ok_or_else(|| missing("footprint_exact"))?,
                        },
                        reuse: r.reuse.ok_or_else(|| missing("reuse"))?,
                        timing: PhaseTiming::Fixed { ns: r.predicted_ns.ok_or_else(|| missing("predicted_ns"))? },
                        alpha: r.alpha.ok_or_else(|| missing("alpha"))?,
                        max_ways: r.max_ways.ok_or_else(|| missing("max_ways"))?,
                    },
                },
                EventKind::PhaseEnd => PhaseEvent::PhaseEnd { time_ns: r.time_ns, pid: r.pid },
                EventKind::ProcessEnd => PhaseEvent::ProcessEnd { time_ns: r.time_ns, pid: r.pid },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Life {
    Started,
    InPhase,
    BetweenPhases,
    Ended,
}

/// Checks per-process ordering; returns the index of the first bad event.
fn validate(events: &[PhaseEvent]) -> Result<(), SimError> {
    let mut state: BTreeMap<Pid, (Life, f64)> = BTreeMap::new();
    let mut last_time = f64::NEG_INFINITY;
    for (i, e) in events.iter().enumerate() {
        let bad = |message: &str| SimError::Trace { record: i + 1, message: format!("pid {}: {message}", e.pid()) };
        if e.time_ns() < last_time {
            return Err(bad("events are not sorted by time"));
        }
        last_time = e.time_ns();
        let prev = state.get(&e.pid()).copied();
        let next = match (e, prev.map(|p| p.0)) {
            (PhaseEvent::ProcessStart { .. }, None) => Life::Started,
            (PhaseEvent::ProcessStart { .. }, Some(_)) => return Err(bad("process started twice")),
            (_, None) => return Err(bad("event before ProcessStart")),
            (PhaseEvent::PhaseStart { .. }, Some(Life::Started | Life::BetweenPhases)) => Life::InPhase,
            (PhaseEvent::PhaseStart { .. }, Some(_)) => return Err(bad("PhaseStart without a preceding PhaseEnd")),
            (PhaseEvent::PhaseEnd { .. }, Some(Life::InPhase)) => Life::BetweenPhases,
            (PhaseEvent::PhaseEnd { .. }, Some(_)) => return Err(bad("PhaseEnd outside a phase")),
            (PhaseEvent::ProcessEnd { .. }, Some(Life::Started | Life::BetweenPhases)) => Life::Ended,
            (PhaseEvent::ProcessEnd { .. }, Some(_)) => return Err(bad("ProcessEnd inside a phase or after the end")),
        };
        if let Some((_, t)) = prev {
            if e.time_ns() < t {
                return Err(bad("events out of order"));
            }
        }
        state.insert(e.pid(), (next, e.time_ns()));
    }
    Ok(())
}

/// Drives the probe-based allocator from a recorded event sequence. At each
/// timestamp, releases come first, then all process starts as one batch,
/// then phase changes in pid order.
pub fn replay_trace(events: &[PhaseEvent], config: &SystemConfig) -> Result<Vec<AllocationRecord>, SimError> {
    validate(events)?;
    let mut alloc = Allocator::new(config.clone()).map_err(SimError::Config)?;
    let mut pending: BTreeMap<Pid, (f64, u32)> = BTreeMap::new();
    let mut i = 0;
    while i < events.len() {
        let now = events[i].time_ns();
        let mut j = i;
        while j < events.len() && events[j].time_ns() == now {
            j += 1;
        }
        let group = &events[i..j];
        for e in group {
            if let PhaseEvent::ProcessEnd { pid, .. } = e {
                alloc.release(now, *pid).map_err(SimError::Alloc)?;
            }
        }
        let mut batch = Vec::new();
        let mut changes = Vec::new();
        for (k, e) in group.iter().enumerate() {
            match e {
                PhaseEvent::ProcessStart { pid, alpha, max_ways, .. } => {
                    pending.insert(*pid, (*alpha, *max_ways));
                }
                PhaseEvent::PhaseStart { pid, attrs, .. } => match pending.remove(pid) {
                    Some((alpha, max_ways)) => {
                        batch.push(Admission { pid: *pid, alpha, max_ways, phase: attrs.clone() })
                    }
                    None => changes.push((i + k, *pid, attrs)),
                },
                _ => {}
            }
        }
        for r in alloc.admit_batch(now, batch) {
            r.map_err(SimError::Alloc)?;
        }
        changes.sort_by_key(|c| c.1);
        for (_, pid, attrs) in changes {
            alloc.pcca(now, pid, attrs.clone()).map_err(SimError::Alloc)?;
        }
        i = j;
    }
    if let Some(pid) = pending.keys().next() {
        return Err(SimError::Trace {
            record: events.len(),
            message: format!("pid {pid}: ProcessStart without a PhaseStart"),
        });
    }
    Ok(alloc.log().to_vec())
}
