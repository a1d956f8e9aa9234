use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::apportion::{
    first_fit, Admission, AllocError, AllocationRecord, Allocator, CapacityBitmask, LogEvent, OccupancyScenario, Pid,
};
use crate::config::SystemConfig;
use crate::sensitivity::ProbeAttributes;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Probe-driven apportioning: IPCA at start, PCCA at every phase change.
    ComCas,
    /// Every process may use every way of its socket.
    Unpartitioned,
    /// Each process keeps `max_ways` ways for its whole run.
    MaxWaysStatic,
    /// Equal split, then one way per socket moves to the neediest process
    /// every `interval_ns`.
    ReactiveCounter { interval_ns: f64 },
}

impl Policy {
    pub const DEFAULT_INTERVAL_NS: f64 = 500e6;

    pub fn name(&self) -> &'static str {
        match self {
            Policy::ComCas => "comcas",
            Policy::Unpartitioned => "unpartitioned",
            Policy::MaxWaysStatic => "maxways",
            Policy::ReactiveCounter { .. } => "reactive",
        }
    }

    pub fn parse(name: &str, interval_ns: f64) -> Option<Self> {
        match name {
            "comcas" => Some(Policy::ComCas),
            "unpartitioned" => Some(Policy::Unpartitioned),
            "maxways" => Some(Policy::MaxWaysStatic),
            "reactive" if interval_ns > 0.0 => Some(Policy::ReactiveCounter { interval_ns }),
            _ => None,
        }
    }

    pub fn all(interval_ns: f64) -> [Policy; 4] {
        [Policy::ComCas, Policy::Unpartitioned, Policy::MaxWaysStatic, Policy::ReactiveCounter { interval_ns }]
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::ReactiveCounter { interval_ns } => write!(f, "reactive({}ms)", interval_ns / 1e6),
            p => f.write_str(p.name()),
        }
    }
}

/// What a policy needs to know about a process joining.
pub(crate) struct Joiner<'a> {
    pub pid: Pid,
    pub alpha: f64,
    pub max_ways: u32,
    pub phase: &'a ProbeAttributes,
}

pub(crate) enum PolicyState {
    ComCas(Allocator),
    Baseline(Baseline),
}

impl PolicyState {
    pub fn new(policy: Policy, config: &SystemConfig) -> Result<Self, crate::config::ConfigError> {
        Ok(match policy {
            Policy::ComCas => PolicyState::ComCas(Allocator::new(config.clone())?),
            other => {
                config.validate()?;
                PolicyState::Baseline(Baseline::new(other, config.clone()))
            }
        })
    }

    /// Admits what fits; returns the pids that must wait for a core.
    pub fn admit(&mut self, now: f64, batch: &[Joiner<'_>]) -> Result<Vec<Pid>, AllocError> {
        match self {
            PolicyState::ComCas(a) => {
                let admissions = batch
                    .iter()
                    .map(|j| Admission { pid: j.pid, alpha: j.alpha, max_ways: j.max_ways, phase: j.phase.clone() })
                    .collect();
                let mut rejected = Vec::new();
                for r in a.admit_batch(now, admissions) {
                    match r {
                        Ok(_) => {}
                        Err(AllocError::AdmissionRejected(pid)) => rejected.push(pid),
                        Err(e) => return Err(e),
                    }
                }
                Ok(rejected)
            }
            PolicyState::Baseline(b) => Ok(b.admit(now, batch)),
        }
    }

    pub fn phase_change(&mut self, now: f64, pid: Pid, phase: &ProbeAttributes) -> Result<(), AllocError> {
        match self {
            PolicyState::ComCas(a) => a.pcca(now, pid, phase.clone()).map(|_| ()),
            PolicyState::Baseline(b) => b.phase_change(pid, phase),
        }
    }

    pub fn release(&mut self, now: f64, pid: Pid) -> Result<(), AllocError> {
        match self {
            PolicyState::ComCas(a) => a.release(now, pid),
            PolicyState::Baseline(b) => b.release(now, pid),
        }
    }

    /// Period of the reactive adjustment, if the policy has one.
    pub fn tick_interval(&self) -> Option<f64> {
        match self {
            PolicyState::Baseline(Baseline { kind: Policy::ReactiveCounter { interval_ns }, .. }) => Some(*interval_ns),
            _ => None,
        }
    }

    pub fn tick(&mut self, now: f64, effective: &BTreeMap<Pid, u32>) {
        if let PolicyState::Baseline(b) = self {
            b.tick(now, effective);
        }
    }

    pub fn placement(&self, pid: Pid) -> Option<(u32, CapacityBitmask)> {
        match self {
            PolicyState::ComCas(a) => Some((a.process(pid)?.socket, a.mask_of(pid)?)),
            PolicyState::Baseline(b) => b.procs.get(&pid).map(|p| (p.socket, p.mask)),
        }
    }

    pub fn log(&self) -> &[AllocationRecord] {
        match self {
            PolicyState::ComCas(a) => a.log(),
            PolicyState::Baseline(b) => &b.log,
        }
    }

    pub fn warnings(&self) -> Vec<String> {
        match self {
            PolicyState::ComCas(a) => a.warnings().to_vec(),
            PolicyState::Baseline(_) => Vec::new(),
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        match self {
            PolicyState::ComCas(a) => a.check_invariants(),
            PolicyState::Baseline(b) => b.check_invariants(),
        }
    }

    pub fn fraction_sum(&self, socket: u32) -> Option<f64> {
        match self {
            PolicyState::ComCas(a) => Some(a.fraction_sum(socket)),
            PolicyState::Baseline(_) => None,
        }
    }
}

pub(crate) struct BaselineProc {
    socket: u32,
    mask: CapacityBitmask,
    alpha: f64,
    max_ways: u32,
    phase_alpha: f64,
    phase_max_ways: u32,
    /// Ways assigned by the reactive split.
    ways: u32,
}

pub(crate) struct Baseline {
    kind: Policy,
    config: SystemConfig,
    procs: BTreeMap<Pid, BaselineProc>,
    members: Vec<BTreeSet<Pid>>,
    log: Vec<AllocationRecord>,
}

impl Baseline {
    fn new(kind: Policy, config: SystemConfig) -> Self {
        let members = vec![BTreeSet::new(); config.sockets as usize];
        Self { kind, config, procs: BTreeMap::new(), members, log: Vec::new() }
    }

    fn free_cores(&self, s: usize) -> u32 {
        self.config.cores_per_socket.saturating_sub(self.members[s].len() as u32)
    }

    /// Socket with the most free cores, lowest id on ties.
    fn pick_socket(&self) -> Option<u32> {
        (0..self.members.len())
            .filter(|&s| self.free_cores(s) > 0)
            .fold(None, |best: Option<usize>, s| match best {
                Some(b) if self.free_cores(b) >= self.free_cores(s) => Some(b),
                _ => Some(s),
            })
            .map(|s| s as u32)
    }

    fn admit(&mut self, now: f64, batch: &[Joiner<'_>]) -> Vec<Pid> {
        let total = self.config.ways_per_socket;
        let mut rejected = Vec::new();
        let mut touched = BTreeSet::new();
        let mut order: Vec<&Joiner<'_>> = batch.iter().collect();
        order.sort_by_key(|j| j.pid);
        for j in order {
            let Some(socket) = self.pick_socket() else {
                rejected.push(j.pid);
                continue;
            };
            let mask = match self.kind {
                Policy::MaxWaysStatic => self.static_window(socket, j.max_ways.min(total)),
                _ => CapacityBitmask::full(total),
            };
            self.procs.insert(
                j.pid,
                BaselineProc {
                    socket,
                    mask,
                    alpha: j.alpha,
                    max_ways: j.max_ways,
                    phase_alpha: j.phase.alpha,
                    phase_max_ways: j.phase.max_ways,
                    ways: mask.popcount(),
                },
            );
            self.members[socket as usize].insert(j.pid);
            touched.insert(socket);
            if !matches!(self.kind, Policy::ReactiveCounter { .. }) {
                self.record(now, j.pid, LogEvent::Assign, true);
            }
        }
        if matches!(self.kind, Policy::ReactiveCounter { .. }) {
            let new: BTreeSet<Pid> = batch.iter().map(|j| j.pid).collect();
            for s in touched {
                self.equal_split(now, s, &new);
            }
        }
        rejected
    }

    /// First free window of `len` ways, else the window overlapping the
    /// fewest existing grants (lowest start on ties).
    fn static_window(&self, socket: u32, len: u32) -> CapacityBitmask {
        let total = self.config.ways_per_socket;
        let masks: Vec<CapacityBitmask> = self.members[socket as usize].iter().map(|p| self.procs[p].mask).collect();
        let used = masks.iter().fold(0u64, |m, k| m | k.bits());
        let start = first_fit(used, len, total).unwrap_or_else(|| {
            (0..=total - len)
                .min_by_key(|&s| (s..s + len).map(|w| masks.iter().filter(|m| m.contains(w)).count()).sum::<usize>())
                .unwrap()
        });
        CapacityBitmask::new(start, len, total).unwrap()
    }

    /// Splits the socket evenly in pid order; the remainder goes to the
    /// lowest pids. With more processes than ways, each gets one way and the
    /// assignment wraps around.
    fn equal_split(&mut self, now: f64, socket: u32, new: &BTreeSet<Pid>) {
        let total = self.config.ways_per_socket;
        let pids: Vec<Pid> = self.members[socket as usize].iter().copied().collect();
        let n = pids.len() as u32;
        if n == 0 {
            return;
        }
        let ways: Vec<u32> = if n <= total {
            (0..n).map(|i| total / n + u32::from(i < total % n)).collect()
        } else {
            vec![1; n as usize]
        };
        self.lay_out(now, socket, &pids, &ways, LogEvent::Assign, new);
    }

    fn lay_out(&mut self, now: f64, socket: u32, pids: &[Pid], ways: &[u32], event: LogEvent, force: &BTreeSet<Pid>) {
        let total = self.config.ways_per_socket;
        let _ = socket;
        let mut cursor = 0;
        for (&pid, &w) in pids.iter().zip(ways) {
            let start = if cursor + w > total { cursor % total } else { cursor };
            let mask = CapacityBitmask::new(start.min(total - w), w, total).unwrap();
            cursor += w;
            let p = self.procs.get_mut(&pid).unwrap();
            let changed = p.mask != mask || p.ways != w;
            p.mask = mask;
            p.ways = w;
            if changed || force.contains(&pid) {
                self.record(now, pid, event, true);
            }
        }
    }

    fn phase_change(&mut self, pid: Pid, phase: &ProbeAttributes) -> Result<(), AllocError> {
        let p = self.procs.get_mut(&pid).ok_or(AllocError::NotPlaced(pid))?;
        p.phase_alpha = phase.alpha;
        p.phase_max_ways = phase.max_ways;
        Ok(())
    }

    fn release(&mut self, now: f64, pid: Pid) -> Result<(), AllocError> {
        if !self.procs.contains_key(&pid) {
            return Err(AllocError::NotPlaced(pid));
        }
        self.record(now, pid, LogEvent::Release, true);
        let p = self.procs.remove(&pid).unwrap();
        self.members[p.socket as usize].remove(&pid);
        if matches!(self.kind, Policy::ReactiveCounter { .. }) {
            self.equal_split(now, p.socket, &BTreeSet::new());
        }
        Ok(())
    }

    /// Moves one way per socket from the least needy satisfied process to
    /// the neediest deficient one; need is `alpha * (max_ways - ways)` of
    /// the current phase.
    fn tick(&mut self, now: f64, effective: &BTreeMap<Pid, u32>) {
        let total = self.config.ways_per_socket;
        for s in 0..self.members.len() {
            let pids: Vec<Pid> = self.members[s].iter().copied().collect();
            if pids.is_empty() || pids.len() as u32 > total {
                continue;
            }
            let need = |pid: &Pid| {
                let p = &self.procs[pid];
                let eff = effective.get(pid).copied().unwrap_or(p.mask.popcount());
                p.phase_alpha * (p.phase_max_ways as f64 - eff as f64)
            };
            let deficient = |pid: &Pid| {
                let p = &self.procs[pid];
                effective.get(pid).copied().unwrap_or(p.mask.popcount()) < p.phase_max_ways
            };
            let receiver =
                pids.iter().filter(|p| deficient(p) && need(p) > 0.0).fold(None, |best: Option<(Pid, f64)>, &p| {
                    match best {
                        Some((_, n)) if n >= need(&p) => best,
                        _ => Some((p, need(&p))),
                    }
                });
            let donor = pids.iter().filter(|p| !deficient(p) && self.procs[p].ways > 1).fold(
                None,
                |best: Option<(Pid, f64)>, &p| match best {
                    Some((_, n)) if n <= need(&p) => best,
                    _ => Some((p, need(&p))),
                },
            );
            if let (Some((r, _)), Some((d, _))) = (receiver, donor) {
                let mut ways: Vec<u32> = pids.iter().map(|p| self.procs[p].ways).collect();
                let ri = pids.iter().position(|&p| p == r).unwrap();
                let di = pids.iter().position(|&p| p == d).unwrap();
                ways[ri] += 1;
                ways[di] -= 1;
                self.lay_out(now, s as u32, &pids, &ways, LogEvent::Tick, &BTreeSet::new());
            }
        }
    }

    fn record(&mut self, now: f64, pid: Pid, event: LogEvent, changed: bool) {
        let p = &self.procs[&pid];
        let req = match self.kind {
            Policy::ReactiveCounter { .. } => p.phase_max_ways,
            _ => p.max_ways,
        };
        self.log.push(AllocationRecord {
            time_ns: now,
            pid,
            event,
            socket: p.socket,
            clos: pid,
            ways: p.mask.popcount(),
            req_ways: req,
            alpha: p.alpha,
            bitmask: p.mask.to_hex(),
            scenario: OccupancyScenario::Underutilized,
            satisfied: p.mask.popcount() >= req,
            changed,
        });
    }

    fn check_invariants(&self) -> Result<(), String> {
        for (s, m) in self.members.iter().enumerate() {
            if m.len() > self.config.cores_per_socket as usize {
                return Err(format!("socket {s} runs {} processes", m.len()));
            }
        }
        Ok(())
    }
}
