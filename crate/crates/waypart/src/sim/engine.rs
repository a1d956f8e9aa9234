use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::mix::{MixCategory, MixSpec, ProcessSpec};
use super::policy::{Joiner, Policy, PolicyState};
use super::trace::{sort_events, PhaseEvent};
use super::{effective_ways, phase_speed, run_unmixed, Occupant};
use crate::apportion::{AllocError, AllocationRecord, Pid};
use crate::config::{ConfigError, SystemConfig};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trace record {record}: {message}")]
    Trace { record: usize, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error("invariant violated at t={time_ns} ns: {message}")]
    Invariant { time_ns: f64, message: String },
    #[error("simulation stalled at t={time_ns} ns with {waiting} processes unable to start")]
    Stalled { time_ns: f64, waiting: usize },
    #[error("mix does not fit the configuration: {0}")]
    Mix(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    pub pid: Pid,
    pub name: String,
    pub socket: u32,
    pub arrival_ns: f64,
    /// When the process got a core; later than arrival if it had to wait.
    pub start_ns: f64,
    pub finish_ns: f64,
    pub unmixed_ns: f64,
    pub work: f64,
    /// Integral of speed over the process's running time.
    pub work_done: f64,
}

impl ProcessOutcome {
    pub fn completion_ns(&self) -> f64 {
        self.finish_ns - self.arrival_ns
    }

    /// Mixed completion time over unmixed time.
    pub fn slowdown(&self) -> f64 {
        self.completion_ns() / self.unmixed_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub mix: String,
    pub category: MixCategory,
    pub policy: Policy,
    pub config: SystemConfig,
    /// In pid order.
    pub processes: Vec<ProcessOutcome>,
    pub log: Vec<AllocationRecord>,
    /// Sorted by (time, pid, kind).
    pub trace: Vec<PhaseEvent>,
    pub warnings: Vec<String>,
    /// Largest number of running processes that ever shared one mask.
    pub max_clos_group_size: usize,
    /// Sum of cache fractions per socket right after the admissions at
    /// t = 0 (probe-based policy only).
    pub initial_fraction_sums: Vec<(u32, f64)>,
    pub makespan_ns: f64,
    pub event_groups: u64,
}

impl SimReport {
    pub fn outcome(&self, pid: Pid) -> Option<&ProcessOutcome> {
        self.processes.iter().find(|p| p.pid == pid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Pending,
    Waiting,
    Running,
    Done,
}

struct Proc<'a> {
    spec: &'a ProcessSpec,
    status: Status,
    phase: usize,
    remaining: f64,
    speed: f64,
    work_done: f64,
    socket: Option<u32>,
    start: f64,
    finish: f64,
}

impl Proc<'_> {
    fn time_left(&self) -> f64 {
        self.remaining / self.speed
    }
}

/// Co-executes `mix` under `policy`.
///
/// Events at one timestamp are handled as: process ends, then every start
/// (new arrivals and processes still waiting for a core) as one batch, then
/// phase changes in pid order, then a reactive tick if one is due. Speeds
/// are recomputed after every group, so a change mid-phase keeps the
/// remaining work and rescales the remaining time.
pub fn run_mix(mix: &MixSpec, policy: Policy, config: &SystemConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    if let Policy::ReactiveCounter { interval_ns } = policy {
        if !(interval_ns > 0.0 && interval_ns.is_finite()) {
            return Err(SimError::Config(ConfigError("reactive interval must be positive".into())));
        }
    }
    for p in &mix.processes {
        if p.max_ways > config.ways_per_socket || p.phases.iter().any(|ph| ph.attrs.max_ways > config.ways_per_socket) {
            return Err(SimError::Mix(format!("pid {}: max_ways exceeds {} ways", p.pid, config.ways_per_socket)));
        }
    }
    let mut state = PolicyState::new(policy, config)?;
    let mut procs: BTreeMap<Pid, Proc<'_>> = mix
        .processes
        .iter()
        .map(|spec| {
            let p = Proc {
                spec,
                status: Status::Pending,
                phase: 0,
                remaining: 0.0,
                speed: 0.0,
                work_done: 0.0,
                socket: None,
                start: 0.0,
                finish: 0.0,
            };
            (spec.pid, p)
        })
        .collect();
    let mut arrivals: Vec<(f64, Pid)> = mix.processes.iter().map(|p| (p.start_ns, p.pid)).collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut trace = Vec::new();
    let mut next_arrival = 0;
    let mut now = 0.0_f64;
    let mut ticks_done: u64 = 0;
    let mut max_group = 0;
    let mut initial_fraction_sums = Vec::new();
    let mut groups = 0u64;

    loop {
        let running = procs.values().any(|p| p.status == Status::Running);
        let waiting = procs.values().filter(|p| p.status == Status::Waiting).count();
        let mut next = f64::INFINITY;
        if let Some(&(t, _)) = arrivals.get(next_arrival) {
            next = t;
        }
        for p in procs.values().filter(|p| p.status == Status::Running) {
            next = next.min(now + p.time_left());
        }
        let mut tick_at = None;
        if let (true, Some(interval)) = (running, state.tick_interval()) {
            while (ticks_done + 1) as f64 * interval < now {
                ticks_done += 1;
            }
            let t = (ticks_done + 1) as f64 * interval;
            if t <= next {
                next = t;
                tick_at = Some(t);
            }
        }
        if next == f64::INFINITY {
            if waiting > 0 {
                return Err(SimError::Stalled { time_ns: now, waiting });
            }
            break;
        }
        let dt = next - now;
        for p in procs.values_mut().filter(|p| p.status == Status::Running) {
            let done = p.speed * dt;
            p.work_done += done;
            p.remaining -= done;
        }
        now = next;
        groups += 1;

        // Phase boundaries.
        let tol = (now * 1e-12).max(1e-9);
        let mut releases = Vec::new();
        let mut changes = Vec::new();
        for (&pid, p) in procs.iter_mut() {
            if p.status != Status::Running || p.time_left() > tol {
                continue;
            }
            trace.push(PhaseEvent::PhaseEnd { time_ns: now, pid });
            if p.phase + 1 < p.spec.phases.len() {
                p.phase += 1;
                let next_phase = &p.spec.phases[p.phase];
                p.remaining = next_phase.work;
                trace.push(PhaseEvent::PhaseStart { time_ns: now, pid, attrs: next_phase.attrs.clone() });
                changes.push(pid);
            } else {
                p.status = Status::Done;
                p.remaining = 0.0;
                p.finish = now;
                trace.push(PhaseEvent::ProcessEnd { time_ns: now, pid });
                releases.push(pid);
            }
        }
        for pid in releases {
            state.release(now, pid)?;
        }

        // Starts.
        while let Some(&(t, pid)) = arrivals.get(next_arrival) {
            if t > now {
                break;
            }
            procs.get_mut(&pid).unwrap().status = Status::Waiting;
            next_arrival += 1;
        }
        let joining: Vec<Pid> = procs.iter().filter(|(_, p)| p.status == Status::Waiting).map(|(&k, _)| k).collect();
        if !joining.is_empty() {
            let batch: Vec<Joiner<'_>> = joining
                .iter()
                .map(|pid| {
                    let spec = procs[pid].spec;
                    Joiner { pid: *pid, alpha: spec.alpha, max_ways: spec.max_ways, phase: &spec.phases[0].attrs }
                })
                .collect();
            let rejected: BTreeSet<Pid> = state.admit(now, &batch)?.into_iter().collect();
            for pid in joining.into_iter().filter(|p| !rejected.contains(p)) {
                let p = procs.get_mut(&pid).unwrap();
                p.status = Status::Running;
                p.phase = 0;
                p.remaining = p.spec.phases[0].work;
                p.start = now;
                trace.push(PhaseEvent::ProcessStart {
                    time_ns: now,
                    pid,
                    alpha: p.spec.alpha,
                    max_ways: p.spec.max_ways,
                });
                trace.push(PhaseEvent::PhaseStart { time_ns: now, pid, attrs: p.spec.phases[0].attrs.clone() });
            }
        }
        if groups == 1 && now == 0.0 {
            for s in 0..config.sockets {
                let any = procs
                    .values()
                    .any(|p| p.status == Status::Running && state.placement(p.spec.pid).is_some_and(|(k, _)| k == s));
                if let (true, Some(sum)) = (any, state.fraction_sum(s)) {
                    initial_fraction_sums.push((s, sum));
                }
            }
        }

        // Phase changes.
        for pid in changes {
            let p = &procs[&pid];
            state.phase_change(now, pid, &p.spec.phases[p.phase].attrs)?;
        }

        if tick_at == Some(now) {
            let eff = effective_map(&procs, &state);
            state.tick(now, &eff);
            ticks_done += 1;
        }

        // New speeds under the new allocation.
        let eff = effective_map(&procs, &state);
        for (pid, p) in procs.iter_mut().filter(|(_, p)| p.status == Status::Running) {
            let (socket, _) = state.placement(*pid).ok_or_else(|| SimError::Invariant {
                time_ns: now,
                message: format!("running process {pid} has no allocation"),
            })?;
            match p.socket {
                Some(s) if s != socket => {
                    return Err(SimError::Invariant { time_ns: now, message: format!("process {pid} moved socket") })
                }
                _ => p.socket = Some(socket),
            }
            p.speed = phase_speed(&p.spec.phases[p.phase], eff[pid], config);
        }
        state.check_invariants().map_err(|message| SimError::Invariant { time_ns: now, message })?;
        max_group = max_group.max(largest_mask_group(&procs, &state));
    }

    sort_events(&mut trace);
    let processes: Vec<ProcessOutcome> = procs
        .values()
        .map(|p| ProcessOutcome {
            pid: p.spec.pid,
            name: p.spec.name.clone(),
            socket: p.socket.unwrap_or(0),
            arrival_ns: p.spec.start_ns,
            start_ns: p.start,
            finish_ns: p.finish,
            unmixed_ns: run_unmixed(p.spec, config),
            work: p.spec.total_work(),
            work_done: p.work_done,
        })
        .collect();
    let makespan_ns = processes.iter().map(|p| p.finish_ns).fold(0.0, f64::max);
    Ok(SimReport {
        mix: mix.name.clone(),
        category: mix.category,
        policy,
        config: config.clone(),
        processes,
        log: state.log().to_vec(),
        trace,
        warnings: state.warnings(),
        max_clos_group_size: max_group,
        initial_fraction_sums,
        makespan_ns,
        event_groups: groups,
    })
}

/// Usable ways of every running process given its socket's occupants.
fn effective_map(procs: &BTreeMap<Pid, Proc<'_>>, state: &PolicyState) -> BTreeMap<Pid, u32> {
    let mut by_socket: BTreeMap<u32, Vec<(Pid, Occupant)>> = BTreeMap::new();
    for (&pid, p) in procs.iter().filter(|(_, p)| p.status == Status::Running) {
        if let Some((socket, mask)) = state.placement(pid) {
            let reuse = p.spec.phases[p.phase].attrs.reuse;
            by_socket.entry(socket).or_default().push((pid, Occupant { mask, reuse }));
        }
    }
    let mut out = BTreeMap::new();
    for occupants in by_socket.values() {
        let all: Vec<Occupant> = occupants.iter().map(|o| o.1).collect();
        for (pid, o) in occupants {
            out.insert(*pid, effective_ways(o, &all));
        }
    }
    out
}

fn largest_mask_group(procs: &BTreeMap<Pid, Proc<'_>>, state: &PolicyState) -> usize {
    let mut groups: BTreeMap<(u32, u64), usize> = BTreeMap::new();
    for (&pid, _) in procs.iter().filter(|(_, p)| p.status == Status::Running) {
        if let Some((socket, mask)) = state.placement(pid) {
            *groups.entry((socket, mask.bits())).or_default() += 1;
        }
    }
    groups.into_values().max().unwrap_or(0)
}
