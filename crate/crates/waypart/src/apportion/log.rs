use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{OccupancyScenario, Pid};
use crate::formats::{read_versioned_csv, write_versioned_csv, FormatError};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogEvent {
    /// Initial placement of a process.
    Ipca,
    /// Re-apportioning on a phase change.
    Pcca,
    Release,
    /// A CLOS grew from ways freed elsewhere.
    Transfer,
    /// A CLOS moved or was resized as a side effect of another decision.
    Remap,
    /// Static placement by a baseline policy.
    Assign,
    /// Periodic adjustment by the reactive baseline.
    Tick,
}

impl LogEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            LogEvent::Ipca => "ipca",
            LogEvent::Pcca => "pcca",
            LogEvent::Release => "release",
            LogEvent::Transfer => "transfer",
            LogEvent::Remap => "remap",
            LogEvent::Assign => "assign",
            LogEvent::Tick => "tick",
        }
    }
}

/// One allocation decision as it affected one process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRecord {
    pub time_ns: f64,
    pub pid: Pid,
    pub event: LogEvent,
    pub socket: u32,
    pub clos: u32,
    /// Width of the CLOS mask.
    pub ways: u32,
    pub req_ways: u32,
    pub alpha: f64,
    pub bitmask: String,
    pub scenario: OccupancyScenario,
    pub satisfied: bool,
    /// Whether the decision altered the allocation state.
    pub changed: bool,
}

impl AllocationRecord {
    pub fn mask_bits(&self) -> Option<u64> {
        u64::from_str_radix(self.bitmask.trim_start_matches("0x"), 16).ok()
    }

    /// Ways granted toward the process's own demand.
    pub fn granted(&self) -> u32 {
        self.ways.min(self.req_ways)
    }

    pub fn is_apportion(&self) -> bool {
        self.changed && matches!(self.event, LogEvent::Ipca | LogEvent::Pcca)
    }
}

pub fn write_log_csv<W: Write>(out: W, records: &[AllocationRecord]) -> Result<(), FormatError> {
    write_versioned_csv(out, LOG_FORMAT_VERSION, records)
}

pub fn read_log_csv<R: BufRead>(input: R) -> Result<Vec<AllocationRecord>, FormatError> {
    read_versioned_csv(input, LOG_FORMAT_VERSION, "allocation log")
}
