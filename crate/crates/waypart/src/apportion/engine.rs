use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::bitmask::{first_fit, BitmaskError, CapacityBitmask};
use super::log::{AllocationRecord, LogEvent};
use super::{adjusted_footprint, cache_fractions, classify_scenario, required_ways, OccupancyScenario, Pid};
use crate::config::{ConfigError, SystemConfig};
use crate::loop_model::ReuseClass;
use crate::sensitivity::ProbeAttributes;
use crate::timing::TimingError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("process {0} cannot be admitted: no socket has a free core or CLOS")]
    AdmissionRejected(Pid),
    #[error("process {0} is not placed")]
    NotPlaced(Pid),
    #[error("process {0} is already placed")]
    AlreadyPlaced(Pid),
    #[error(transparent)]
    Bitmask(#[from] BitmaskError),
    #[error("process {pid}: {source}")]
    Timing { pid: Pid, source: TimingError },
}

/// A process asking for its first allocation.
#[derive(Debug, Clone)]
pub struct Admission {
    pub pid: Pid,
    pub alpha: f64,
    pub max_ways: u32,
    pub phase: ProbeAttributes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub pid: Pid,
    pub alpha: f64,
    pub max_ways: u32,
    pub phase: ProbeAttributes,
    pub socket: u32,
    pub clos: u32,
    /// Share computed at the last effective apportioning; kept until the
    /// process's own next one.
    pub fraction: f64,
    pub req_ways: u32,
    pub predicted_end_ns: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosState {
    pub id: u32,
    pub members: Vec<Pid>,
    pub bitmask: CapacityBitmask,
    /// Largest way demand among the members.
    pub demand_ways: u32,
}

impl ClosState {
    pub fn satisfied(&self) -> bool {
        self.bitmask.popcount() >= self.demand_ways
    }

    pub fn deficit(&self) -> u32 {
        self.demand_ways.saturating_sub(self.bitmask.popcount())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationDecision {
    pub pid: Pid,
    pub socket: u32,
    pub clos: u32,
    pub bitmask: CapacityBitmask,
    pub req_ways: u32,
    pub allocated_ways: u32,
    pub satisfied: bool,
    pub changed: bool,
}

#[derive(Debug, Clone, Default)]
struct Socket {
    clos: BTreeMap<u32, ClosState>,
    members: BTreeSet<Pid>,
}

/// Per-socket CLOS bookkeeping driven by IPCA, PCCA and releases.
#[derive(Debug, Clone)]
pub struct Allocator {
    config: SystemConfig,
    sockets: Vec<Socket>,
    procs: BTreeMap<Pid, ProcessState>,
    log: Vec<AllocationRecord>,
    warnings: Vec<String>,
    forced_overlap: bool,
}

/// Socket reserved for cache-hungry processes.
const HIGH_ALPHA_SOCKET: u32 = 0;

impl Allocator {
    pub fn new(config: SystemConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let sockets = vec![Socket::default(); config.sockets as usize];
        Ok(Self {
            config,
            sockets,
            procs: BTreeMap::new(),
            log: Vec::new(),
            warnings: Vec::new(),
            forced_overlap: false,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn process(&self, pid: Pid) -> Option<&ProcessState> {
        self.procs.get(&pid)
    }

    pub fn processes(&self) -> impl Iterator<Item = &ProcessState> {
        self.procs.values()
    }

    pub fn clos_on(&self, socket: u32) -> impl Iterator<Item = &ClosState> {
        self.sockets[socket as usize].clos.values()
    }

    pub fn log(&self) -> &[AllocationRecord] {
        &self.log
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Whether some CLOS masks were made to overlap for lack of free ways.
    pub fn forced_overlap(&self) -> bool {
        self.forced_overlap
    }

    pub fn mask_of(&self, pid: Pid) -> Option<CapacityBitmask> {
        let p = self.procs.get(&pid)?;
        Some(self.sockets[p.socket as usize].clos[&p.clos].bitmask)
    }

    pub fn free_cores(&self, socket: u32) -> u32 {
        self.config.cores_per_socket.saturating_sub(self.sockets[socket as usize].members.len() as u32)
    }

    fn used_mask(&self, socket: u32) -> u64 {
        self.sockets[socket as usize].clos.values().fold(0, |m, c| m | c.bitmask.bits())
    }

    pub fn free_ways(&self, socket: u32) -> u32 {
        self.config.ways_per_socket - self.used_mask(socket).count_ones()
    }

    pub fn fraction_sum(&self, socket: u32) -> f64 {
        self.sockets[socket as usize].members.iter().map(|p| self.procs[p].fraction).sum()
    }

    pub fn scenario(&self, socket: u32) -> OccupancyScenario {
        classify_scenario(self.sockets[socket as usize].members.iter().map(|p| self.procs[p].fraction))
    }

    pub fn ipca(&mut self, now: f64, admission: Admission) -> Result<AllocationDecision, AllocError> {
        self.admit_batch(now, vec![admission]).pop().expect("one admission yields one result")
    }

    /// IPCA for processes starting at the same instant, handled in pid order.
    ///
    /// Sockets are chosen first; fractions are then computed over the
    /// resulting socket populations, so a batch arriving on an idle socket
    /// splits it exactly.
    pub fn admit_batch(&mut self, now: f64, mut batch: Vec<Admission>) -> Vec<Result<AllocationDecision, AllocError>> {
        batch.sort_by_key(|a| a.pid);
        let n = self.sockets.len();
        let mut pending_cores = vec![0u32; n];
        let mut pending_ways = vec![0u32; n];
        let mut placed: Vec<Option<(u32, f64)>> = Vec::with_capacity(batch.len());
        let mut results: Vec<Option<Result<AllocationDecision, AllocError>>> = Vec::with_capacity(batch.len());

        for a in &batch {
            if self.procs.contains_key(&a.pid) || placed_pid(&batch, &placed, a.pid) {
                results.push(Some(Err(AllocError::AlreadyPlaced(a.pid))));
                placed.push(None);
                continue;
            }
            let predicted = match a.phase.timing.predicted_ns() {
                Ok(t) => t,
                Err(source) => {
                    results.push(Some(Err(AllocError::Timing { pid: a.pid, source })));
                    placed.push(None);
                    continue;
                }
            };
            match self.choose_socket(a, &pending_cores, &pending_ways) {
                Some(s) => {
                    pending_cores[s as usize] += 1;
                    pending_ways[s as usize] += a.max_ways.min(self.config.ways_per_socket);
                    placed.push(Some((s, now + predicted)));
                    results.push(None);
                }
                None => {
                    results.push(Some(Err(AllocError::AdmissionRejected(a.pid))));
                    placed.push(None);
                }
            }
        }

        for (a, slot) in batch.iter().zip(&placed) {
            if let Some((socket, end)) = *slot {
                self.procs.insert(
                    a.pid,
                    ProcessState {
                        pid: a.pid,
                        alpha: a.alpha,
                        max_ways: a.max_ways.max(1),
                        phase: a.phase.clone(),
                        socket,
                        clos: u32::MAX,
                        fraction: 0.0,
                        req_ways: 0,
                        predicted_end_ns: end,
                    },
                );
                self.sockets[socket as usize].members.insert(a.pid);
            }
        }
        for (a, slot) in batch.iter().zip(&placed) {
            if let Some((socket, _)) = *slot {
                let f = self.current_fraction(socket, a.pid);
                let p = self.procs.get_mut(&a.pid).unwrap();
                p.fraction = f;
                p.req_ways = required_ways(f, self.config.ways_per_socket, p.max_ways);
            }
        }
        for (i, a) in batch.iter().enumerate() {
            if placed[i].is_some() {
                let r = self.place(now, a.pid);
                if r.is_err() {
                    let p = self.procs.remove(&a.pid).unwrap();
                    self.sockets[p.socket as usize].members.remove(&a.pid);
                }
                results[i] = Some(r);
            }
        }
        results.into_iter().map(|r| r.expect("every admission resolved")).collect()
    }

    fn choose_socket(&self, a: &Admission, pending_cores: &[u32], pending_ways: &[u32]) -> Option<u32> {
        let cores = |s: u32| self.free_cores(s).saturating_sub(pending_cores[s as usize]);
        let high = HIGH_ALPHA_SOCKET;
        let avail = self.free_ways(high).saturating_sub(pending_ways[high as usize]);
        if a.alpha > 1.0 && cores(high) > 0 && avail > a.max_ways {
            return Some(high);
        }
        let best = |pred: &dyn Fn(u32) -> bool| {
            (0..self.config.sockets).filter(|&s| pred(s) && cores(s) > 0).fold(
                None,
                |best: Option<u32>, s| match best {
                    Some(b) if cores(b) >= cores(s) => Some(b),
                    _ => Some(s),
                },
            )
        };
        best(&|s| s != high).or_else(|| best(&|_| true))
    }

    /// Share of `pid` given the current phases of everyone on the socket.
    fn current_fraction(&self, socket: u32, pid: Pid) -> f64 {
        let adjusted: Vec<(Pid, f64)> = self.sockets[socket as usize]
            .members
            .iter()
            .map(|&m| (m, adjusted_footprint(&self.procs[&m].phase, &self.config)))
            .collect();
        cache_fractions(&adjusted)[&pid]
    }

    fn clos_alpha(&self, c: &ClosState) -> f64 {
        c.members.iter().map(|m| self.procs[m].alpha).fold(0.0, f64::max)
    }

    /// Smallest gap between `pid`'s predicted phase end and any member's.
    fn delta_t(&self, c: &ClosState, pid: Pid) -> f64 {
        let end = self.procs[&pid].predicted_end_ns;
        c.members.iter().map(|m| (self.procs[m].predicted_end_ns - end).abs()).fold(f64::INFINITY, f64::min)
    }

    fn least_alpha_with_room(&self, socket: u32) -> Option<u32> {
        let g = self.config.gfactor as usize;
        self.sockets[socket as usize]
            .clos
            .values()
            .filter(|c| c.members.len() < g)
            .fold(None, |best: Option<(u32, f64)>, c| {
                let a = self.clos_alpha(c);
                match best {
                    Some((_, b)) if b <= a => best,
                    _ => Some((c.id, a)),
                }
            })
            .map(|(id, _)| id)
    }

    fn place(&mut self, now: f64, pid: Pid) -> Result<AllocationDecision, AllocError> {
        let p = &self.procs[&pid];
        let (socket, req, reuse) = (p.socket, p.req_ways, p.phase.reuse);
        let total_clos = self.config.clos_per_socket;
        let avail_clos = total_clos - self.sockets[socket as usize].clos.len() as u32;
        let plenty = avail_clos as f64 > self.config.clos_occupancy_threshold * total_clos as f64;
        let g = self.config.gfactor as usize;
        let compatible: Vec<&ClosState> = self.sockets[socket as usize]
            .clos
            .values()
            .filter(|c| c.members.len() < g && c.demand_ways == req)
            .collect();

        let mut join = if plenty && reuse == ReuseClass::Reuse {
            None
        } else if !compatible.is_empty() {
            Some(match reuse {
                ReuseClass::Stream => pick(&compatible, |c| -self.delta_t(c, pid)),
                ReuseClass::Reuse => pick(&compatible, |c| self.clos_alpha(c) / self.delta_t(c, pid).max(1.0)),
            })
        } else if avail_clos > 0 {
            None
        } else {
            let id = self.least_alpha_with_room(socket).ok_or(AllocError::AdmissionRejected(pid))?;
            self.warnings.push(format!(
                "t={now}: process {pid} overflows into CLOS {id} on socket {socket}: no compatible CLOS and none free"
            ));
            Some(id)
        };

        let free = self.free_ways(socket);
        if join.is_none() && free == 0 {
            if let Some(id) = self.least_alpha_with_room(socket) {
                self.warnings.push(format!("t={now}: process {pid} joins CLOS {id} on socket {socket}: no free ways"));
                join = Some(id);
            }
        }

        let clos = match join {
            Some(id) => {
                let c = self.sockets[socket as usize].clos.get_mut(&id).unwrap();
                c.members.push(pid);
                c.demand_ways = c.demand_ways.max(req);
                let short = c.deficit();
                if short > 0 {
                    self.grow(now, socket, id, short, Some(pid), LogEvent::Remap);
                }
                id
            }
            None => self.open_clos(now, socket, pid, req)?,
        };
        self.procs.get_mut(&pid).unwrap().clos = clos;
        self.push_record(now, pid, LogEvent::Ipca, true);
        Ok(self.decision(pid, true))
    }

    fn open_clos(&mut self, now: f64, socket: u32, pid: Pid, req: u32) -> Result<u32, AllocError> {
        let id = (0..self.config.clos_per_socket)
            .find(|id| !self.sockets[socket as usize].clos.contains_key(id))
            .ok_or(AllocError::AdmissionRejected(pid))?;
        let total = self.config.ways_per_socket;
        let free = self.free_ways(socket);
        let bitmask = if free == 0 {
            let host = self.lowest_alpha_clos(socket).ok_or(AllocError::AdmissionRejected(pid))?;
            let start = self.sockets[socket as usize].clos[&host].bitmask.start();
            self.forced_overlap = true;
            self.warnings
                .push(format!("t={now}: CLOS {id} on socket {socket} overlaps CLOS {host}: cache fully allocated"));
            CapacityBitmask::new(start, 1, total)?
        } else {
            let want = req.min(free);
            if first_fit(self.used_mask(socket), want, total).is_none() {
                self.compact(now, socket, None);
            }
            let start = first_fit(self.used_mask(socket), want, total).expect("compaction frees a contiguous tail");
            CapacityBitmask::new(start, want, total)?
        };
        self.sockets[socket as usize].clos.insert(id, ClosState { id, members: vec![pid], bitmask, demand_ways: req });
        Ok(id)
    }

    fn lowest_alpha_clos(&self, socket: u32) -> Option<u32> {
        self.sockets[socket as usize]
            .clos
            .values()
            .fold(None, |best: Option<(u32, f64)>, c| {
                let a = self.clos_alpha(c);
                match best {
                    Some((_, b)) if b <= a => best,
                    _ => Some((c.id, a)),
                }
            })
            .map(|(id, _)| id)
    }

    /// Widens CLOS `id` by up to `extra` free ways: in place to the right,
    /// then to the left, else by moving it, else by packing the socket.
    /// Members other than `actor` get a remap record when their mask moves.
    fn grow(&mut self, now: f64, socket: u32, id: u32, extra: u32, actor: Option<Pid>, event: LogEvent) -> u32 {
        let total = self.config.ways_per_socket;
        let g = extra.min(self.free_ways(socket));
        if g == 0 {
            return 0;
        }
        let sock = &self.sockets[socket as usize];
        let mask = sock.clos[&id].bitmask;
        let others = sock.clos.values().filter(|c| c.id != id).fold(0u64, |m, c| m | c.bitmask.bits());
        let right = (mask.end()..total).take_while(|&w| others >> w & 1 == 0).count() as u32;
        let left = (0..mask.start()).rev().take_while(|&w| others >> w & 1 == 0).count() as u32;
        let len = mask.popcount() + g;
        let new = if right + left >= g {
            let r = g.min(right);
            Some(mask.start() - (g - r))
        } else {
            first_fit(others, len, total)
        };
        let new_mask = match new {
            Some(start) => CapacityBitmask::new(start, len, total).expect("fits by construction"),
            None => {
                let tail = self.compact(now, socket, Some(id));
                let room = total - tail;
                if room <= mask.popcount() {
                    return 0;
                }
                CapacityBitmask::new(tail, len.min(room), total).expect("fits by construction")
            }
        };
        let granted = new_mask.popcount() - mask.popcount();
        self.set_mask(now, socket, id, new_mask, actor, event);
        granted
    }

    /// Packs every CLOS except `skip` towards way 0, keeping their order and
    /// the relative layout of overlapping groups. Returns the first way past
    /// the packed region.
    fn compact(&mut self, now: f64, socket: u32, skip: Option<u32>) -> u32 {
        let mut order: Vec<(u32, CapacityBitmask)> = self.sockets[socket as usize]
            .clos
            .values()
            .filter(|c| Some(c.id) != skip)
            .map(|c| (c.id, c.bitmask))
            .collect();
        order.sort_by_key(|(id, m)| (m.start(), *id));
        let mut cursor = 0u32;
        let mut moves = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let start = order[i].1.start();
            let mut end = order[i].1.end();
            let mut j = i + 1;
            while j < order.len() && order[j].1.start() < end {
                end = end.max(order[j].1.end());
                j += 1;
            }
            let shift = start - cursor;
            for (id, m) in &order[i..j] {
                if shift > 0 {
                    moves.push((*id, CapacityBitmask::new(m.start() - shift, m.popcount(), m.total()).unwrap()));
                }
            }
            cursor = end - shift;
            i = j;
        }
        for (id, m) in moves {
            self.set_mask(now, socket, id, m, None, LogEvent::Remap);
        }
        cursor
    }

    fn set_mask(&mut self, now: f64, socket: u32, id: u32, mask: CapacityBitmask, actor: Option<Pid>, event: LogEvent) {
        let c = self.sockets[socket as usize].clos.get_mut(&id).unwrap();
        if c.bitmask == mask {
            return;
        }
        c.bitmask = mask;
        let members = c.members.clone();
        for m in members {
            if Some(m) != actor && self.procs[&m].clos == id {
                self.push_record(now, m, event, true);
            }
        }
    }

    /// Hands free ways to unsatisfied CLOS, highest alpha first.
    fn redistribute(&mut self, now: f64, socket: u32) {
        loop {
            if self.free_ways(socket) == 0 {
                return;
            }
            let target = self.sockets[socket as usize]
                .clos
                .values()
                .filter(|c| !c.satisfied())
                .map(|c| (c.id, self.clos_alpha(c), c.deficit()))
                .fold(None, |best: Option<(u32, f64, u32)>, cand| match best {
                    Some(b) if (b.1, b.2) >= (cand.1, cand.2) => Some(b),
                    _ => Some(cand),
                });
            let Some((id, _, deficit)) = target else { return };
            if self.grow(now, socket, id, deficit, None, LogEvent::Transfer) == 0 {
                return;
            }
        }
    }

    /// Re-apportions `pid` for the phase it just entered.
    pub fn pcca(&mut self, now: f64, pid: Pid, phase: ProbeAttributes) -> Result<AllocationDecision, AllocError> {
        let predicted = phase.timing.predicted_ns().map_err(|source| AllocError::Timing { pid, source })?;
        let p = self.procs.get_mut(&pid).ok_or(AllocError::NotPlaced(pid))?;
        p.phase = phase;
        p.predicted_end_ns = now + predicted;
        let (socket, id, old_req) = (p.socket, p.clos, p.req_ways);
        let f = self.current_fraction(socket, pid);
        let p = self.procs.get_mut(&pid).unwrap();
        let new_req = required_ways(f, self.config.ways_per_socket, p.max_ways);
        if new_req.abs_diff(old_req) < self.config.hysteresis_ways {
            self.push_record(now, pid, LogEvent::Pcca, false);
            return Ok(self.decision(pid, false));
        }
        p.fraction = f;
        p.req_ways = new_req;

        let demand = self.clos_demand(socket, id);
        let c = self.sockets[socket as usize].clos.get_mut(&id).unwrap();
        c.demand_ways = demand;
        let width = c.bitmask.popcount();
        if demand > width {
            self.grow(now, socket, id, demand - width, Some(pid), LogEvent::Remap);
        } else if demand < width {
            let m = c.bitmask;
            let shrunk = CapacityBitmask::new(m.start(), demand, m.total())?;
            self.set_mask(now, socket, id, shrunk, Some(pid), LogEvent::Remap);
            self.redistribute(now, socket);
        }
        self.push_record(now, pid, LogEvent::Pcca, true);
        Ok(self.decision(pid, true))
    }

    fn clos_demand(&self, socket: u32, id: u32) -> u32 {
        self.sockets[socket as usize].clos[&id].members.iter().map(|m| self.procs[m].req_ways).max().unwrap_or(0)
    }

    /// Removes `pid`; an emptied CLOS is reclaimed and its ways handed out.
    pub fn release(&mut self, now: f64, pid: Pid) -> Result<(), AllocError> {
        let p = self.procs.get(&pid).ok_or(AllocError::NotPlaced(pid))?;
        let (socket, id) = (p.socket, p.clos);
        let c = self.sockets[socket as usize].clos.get_mut(&id).unwrap();
        c.members.retain(|&m| m != pid);
        let emptied = c.members.is_empty();
        self.sockets[socket as usize].members.remove(&pid);
        let mut record = self.record_for(now, pid, LogEvent::Release, true);
        self.procs.remove(&pid);
        if emptied {
            self.sockets[socket as usize].clos.remove(&id);
        } else {
            let demand = self.clos_demand(socket, id);
            let c = self.sockets[socket as usize].clos.get_mut(&id).unwrap();
            c.demand_ways = demand;
            record.satisfied = c.satisfied();
        }
        record.scenario = self.scenario(socket);
        self.log.push(record);
        if emptied {
            self.redistribute(now, socket);
        }
        Ok(())
    }

    fn decision(&self, pid: Pid, changed: bool) -> AllocationDecision {
        let p = &self.procs[&pid];
        let c = &self.sockets[p.socket as usize].clos[&p.clos];
        AllocationDecision {
            pid,
            socket: p.socket,
            clos: c.id,
            bitmask: c.bitmask,
            req_ways: p.req_ways,
            allocated_ways: c.bitmask.popcount().min(p.req_ways),
            satisfied: c.satisfied(),
            changed,
        }
    }

    fn record_for(&self, now: f64, pid: Pid, event: LogEvent, changed: bool) -> AllocationRecord {
        let p = &self.procs[&pid];
        let c = &self.sockets[p.socket as usize].clos[&p.clos];
        AllocationRecord {
            time_ns: now,
            pid,
            event,
            socket: p.socket,
            clos: c.id,
            ways: c.bitmask.popcount(),
            req_ways: p.req_ways,
            alpha: p.alpha,
            bitmask: c.bitmask.to_hex(),
            scenario: self.scenario(p.socket),
            satisfied: c.satisfied(),
            changed,
        }
    }

    fn push_record(&mut self, now: f64, pid: Pid, event: LogEvent, changed: bool) {
        let r = self.record_for(now, pid, event, changed);
        self.log.push(r);
    }

    /// Checks the structural invariants of the current state.
    pub fn check_invariants(&self) -> Result<(), String> {
        let g = self.config.gfactor as usize;
        for (s, sock) in self.sockets.iter().enumerate() {
            if sock.members.len() > self.config.cores_per_socket as usize {
                return Err(format!("socket {s} runs {} processes", sock.members.len()));
            }
            if sock.clos.len() > self.config.clos_per_socket as usize {
                return Err(format!("socket {s} uses {} CLOS", sock.clos.len()));
            }
            let mut seen = 0usize;
            for c in sock.clos.values() {
                if c.members.is_empty() || c.members.len() > g {
                    return Err(format!("socket {s} CLOS {} has {} members", c.id, c.members.len()));
                }
                if CapacityBitmask::from_bits(c.bitmask.bits(), self.config.ways_per_socket).is_err() {
                    return Err(format!("socket {s} CLOS {} mask {} is malformed", c.id, c.bitmask));
                }
                if c.demand_ways != self.clos_demand(s as u32, c.id) {
                    return Err(format!("socket {s} CLOS {} demand is stale", c.id));
                }
                for m in &c.members {
                    let p = self.procs.get(m).ok_or(format!("CLOS member {m} is unknown"))?;
                    if p.socket != s as u32 || p.clos != c.id {
                        return Err(format!("process {m} bookkeeping disagrees with CLOS {}", c.id));
                    }
                    if p.req_ways > p.max_ways || c.bitmask.popcount().min(p.req_ways) > p.max_ways {
                        return Err(format!("process {m} exceeds max_ways"));
                    }
                }
                seen += c.members.len();
                if !self.forced_overlap {
                    for o in sock.clos.values().filter(|o| o.id > c.id) {
                        if o.bitmask.overlaps(&c.bitmask) {
                            return Err(format!("socket {s} CLOS {} and {} overlap", c.id, o.id));
                        }
                    }
                }
            }
            if seen != sock.members.len() {
                return Err(format!("socket {s} CLOS membership does not cover its processes"));
            }
        }
        Ok(())
    }
}

fn placed_pid(batch: &[Admission], placed: &[Option<(u32, f64)>], pid: Pid) -> bool {
    batch.iter().zip(placed).any(|(a, p)| a.pid == pid && p.is_some())
}

/// Lowest score wins; ties go to the lowest CLOS id.
fn pick(candidates: &[&ClosState], score: impl Fn(&ClosState) -> f64) -> u32 {
    let mut best = (candidates[0].id, score(candidates[0]));
    for c in &candidates[1..] {
        let s = score(c);
        if s < best.1 || (s == best.1 && c.id < best.0) {
            best = (c.id, s);
        }
    }
    best.0
}
