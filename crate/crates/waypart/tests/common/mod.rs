#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Deserialize;

use waypart::apportion::{Admission, AllocationRecord, Allocator, Pid};
use waypart::loop_model::{AccessRef, FootprintValue, LoopLevel, LoopNest, MemoryAccess, ReuseClass, Statement};
use waypart::sensitivity::{PhaseTiming, ProbeAttributes};
use waypart::sim::{parse_mix, MixSpec, PhaseEvent};
use waypart::SystemConfig;

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------------------
// Loop nests

/// Random distributed nest: depth 1..=3, statements in non-decreasing depth,
/// affine subscripts over the enclosing loops only.
pub fn random_nest<R: Rng>(rng: &mut R, max_bound: u64, max_iterations: u64) -> LoopNest {
    let depth = rng.gen_range(1..=3usize);
    let mut loops = Vec::with_capacity(depth);
    let mut total = 1u64;
    for l in 0..depth {
        let cap = (max_iterations / total).clamp(1, max_bound);
        let b = rng.gen_range(1..=cap);
        total *= b;
        loops.push(LoopLevel::new(format!("i{l}"), b));
    }
    let n_statements = rng.gen_range(1..=3usize);
    let mut depths: Vec<usize> = (0..n_statements).map(|_| rng.gen_range(1..=depth)).collect();
    depths.sort_unstable();
    let arrays = ["A", "B", "C"];
    let statements = depths
        .into_iter()
        .map(|d| {
            let n_access = rng.gen_range(0..=3usize);
            let accesses = (0..n_access)
                .map(|_| {
                    let array = arrays[rng.gen_range(0..arrays.len())];
                    let used = rng.gen_range(0..=d.min(2));
                    let mut coefs = vec![0i64; d];
                    for _ in 0..used {
                        let level = rng.gen_range(0..d);
                        coefs[level] = rng.gen_range(-3..=4);
                    }
                    let constant = rng.gen_range(0..=8);
                    let size = [1u32, 2, 4, 8, 16][rng.gen_range(0..5)];
                    if rng.gen_bool(0.3) {
                        MemoryAccess::write(array, constant, coefs, size)
                    } else {
                        MemoryAccess::read(array, constant, coefs, size)
                    }
                })
                .collect();
            Statement::new(d, accesses)
        })
        .collect();
    LoopNest::new("random", loops, statements).expect("generated nest is well formed")
}

/// The family with an outer M-loop holding `A[i]`, `A[i+2]` and an inner
/// N-loop over `B[j]`.
pub fn shifted_pair_nest(m: u64, n: u64) -> LoopNest {
    LoopNest::new(
        "shifted-pair",
        vec![LoopLevel::new("i", m), LoopLevel::new("j", n)],
        vec![
            Statement::new(1, vec![MemoryAccess::read("A", 0, vec![1], 8)]),
            Statement::new(1, vec![MemoryAccess::read("A", 2, vec![1], 8)]),
            Statement::new(2, vec![MemoryAccess::read("B", 0, vec![0, 1], 8)]),
        ],
    )
    .unwrap()
}

/// Reuse distance measured on the dynamic trace: for every pair of a
/// `source` access and a later `sink` access to the same element, count the
/// accesses in `[source, sink)` issued by statements nested inside the
/// carrying loop (the innermost loop counts its own body), and take the
/// minimum. `None` when the trace shows no such pair.
pub fn srd_trace_oracle(nest: &LoopNest, source: AccessRef, sink: AccessRef) -> Option<u64> {
    let array = &nest.statements[source.statement].accesses[source.access].array;
    if &nest.statements[sink.statement].accesses[sink.access].array != array {
        return None;
    }
    let k = nest.statements[source.statement].depth.min(nest.statements[sink.statement].depth);
    let deepest = nest.max_statement_depth();

    let mut depth_at: Vec<u8> = Vec::new();
    let mut sources: HashMap<i128, Vec<(usize, Vec<u64>)>> = HashMap::new();
    let mut sinks: HashMap<i128, Vec<(usize, Vec<u64>)>> = HashMap::new();
    trace_nest(nest, &mut |s, a, iteration, element| {
        let pos = depth_at.len();
        depth_at.push(nest.statements[s].depth as u8);
        let here = AccessRef { statement: s, access: a };
        if here == source {
            sources.entry(element).or_default().push((pos, iteration[..k].to_vec()));
        }
        if here == sink {
            sinks.entry(element).or_default().push((pos, iteration[..k].to_vec()));
        }
    });

    // prefix[t][p]: accesses before position p from statements of depth >= t
    let prefix: Vec<Vec<u64>> = (0..=deepest + 1)
        .map(|t| {
            let mut acc = 0u64;
            let mut v = Vec::with_capacity(depth_at.len() + 1);
            v.push(0);
            for &d in &depth_at {
                if d as usize >= t {
                    acc += 1;
                }
                v.push(acc);
            }
            v
        })
        .collect();

    let mut best: Option<u64> = None;
    for (element, srcs) in &sources {
        let Some(dsts) = sinks.get(element) else { continue };
        for (p, xi) in srcs {
            for (q, yi) in dsts {
                if q <= p {
                    continue;
                }
                let carrier = (0..k).find(|&m| xi[m] != yi[m]).map(|m| m + 1);
                let threshold = match carrier {
                    Some(c) => (c + 1).min(deepest),
                    None => (k + 1).min(deepest),
                };
                let count = prefix[threshold][*q] - prefix[threshold][*p];
                best = Some(best.map_or(count, |b| b.min(count)));
            }
        }
    }
    best
}

/// Program-order walk of a nest whose statement depths never decrease:
/// each loop body runs its own statements, then the next loop.
pub fn trace_nest(nest: &LoopNest, visit: &mut impl FnMut(usize, usize, &[u64], i128)) {
    assert!(nest.statements.windows(2).all(|w| w[0].depth <= w[1].depth));
    fn level(nest: &LoopNest, l: usize, it: &mut Vec<u64>, visit: &mut impl FnMut(usize, usize, &[u64], i128)) {
        if l == nest.loops.len() || nest.statements.iter().all(|s| s.depth <= l) {
            return;
        }
        for x in 0..nest.loops[l].upper_bound.value() {
            it.push(x);
            for (si, s) in nest.statements.iter().enumerate().filter(|(_, s)| s.depth == l + 1) {
                for (ai, a) in s.accesses.iter().enumerate() {
                    if let Some(e) = a.affine() {
                        let element = e.constant as i128
                            + it.iter().enumerate().map(|(m, &v)| e.coefficient(m) as i128 * v as i128).sum::<i128>();
                        visit(si, ai, it, element);
                    }
                }
            }
            level(nest, l + 1, it, visit);
            it.pop();
        }
    }
    level(nest, 0, &mut Vec::new(), visit);
}

/// Distinct bytes touched per array, each array rounded up to whole lines.
pub fn footprint_by_trace(nest: &LoopNest, line_size: u32) -> (u64, u64) {
    let mut spans: BTreeMap<String, Vec<(i128, i128)>> = BTreeMap::new();
    trace_nest(nest, &mut |s, a, _, element| {
        let acc = &nest.statements[s].accesses[a];
        let w = acc.element_size as i128;
        spans.entry(acc.array.clone()).or_default().push((element * w, element * w + w));
    });
    let (mut bytes, mut lines) = (0u64, 0u64);
    for mut v in spans.into_values() {
        v.sort_unstable();
        v.dedup();
        let mut covered = 0i128;
        let mut reach = i128::MIN;
        for (lo, hi) in v {
            covered += (hi - lo.max(reach)).max(0);
            reach = reach.max(hi);
        }
        bytes += covered as u64;
        lines += (covered as u64).div_ceil(line_size as u64);
    }
    (bytes, lines)
}

pub fn all_refs(nest: &LoopNest) -> Vec<AccessRef> {
    nest.statements
        .iter()
        .enumerate()
        .flat_map(|(s, st)| (0..st.accesses.len()).map(move |a| AccessRef { statement: s, access: a }))
        .collect()
}

// ---------------------------------------------------------------------------
// Timing

/// Random linear generator: positive coefficients over depth 1..=3.
pub fn random_generator<R: Rng>(rng: &mut R) -> Vec<f64> {
    let depth = rng.gen_range(1..=3usize);
    (0..=depth).map(|i| rng.gen_range(1.0..1000.0) / 10f64.powi(i as i32)).collect()
}

pub fn generator_time(c: &[f64], bounds: &[u64]) -> f64 {
    let mut product = 1.0;
    let mut t = c[0];
    for (ci, &b) in c[1..].iter().zip(bounds) {
        product *= b as f64;
        t += ci * product;
    }
    t
}

pub fn random_bounds<R: Rng>(rng: &mut R, depth: usize) -> Vec<u64> {
    (0..depth).map(|_| rng.gen_range(1..=200)).collect()
}

// ---------------------------------------------------------------------------
// Sensitivity

/// Sum over observed points from the second through `max_ways` of
/// `|t_i - t_{i-1}| / |w_i - w_{i-1}|`, restricted to ways >= 2.
pub fn alpha_by_definition(points: &[(u32, f64)], max_ways: u32) -> f64 {
    let mut sorted: Vec<(u32, f64)> = points.iter().copied().filter(|&(w, _)| w >= 2 && w <= max_ways).collect();
    sorted.sort_by_key(|p| p.0);
    let mut alpha = 0.0;
    for i in 1..sorted.len() {
        let dt = (sorted[i].1 - sorted[i - 1].1).abs();
        let dw = (sorted[i].0 as f64 - sorted[i - 1].0 as f64).abs();
        alpha += dt / dw;
    }
    alpha
}

/// Non-increasing curve over 2 and `top` plus a random subset of the ways
/// between.
pub fn random_monotone_curve<R: Rng>(rng: &mut R, top: u32) -> Vec<(u32, f64)> {
    let mut t = rng.gen_range(1.0..10.0);
    let mut pts = vec![(2, t)];
    for w in 3..=top {
        if w == top || rng.gen_bool(0.6) {
            if rng.gen_bool(0.7) {
                t *= 1.0 - rng.gen_range(0.0..0.4);
            }
            pts.push((w, t));
        }
    }
    pts
}

// ---------------------------------------------------------------------------
// Mixes

fn curve_text(pts: &[(u32, f64)]) -> String {
    let body: Vec<String> = pts.iter().map(|(w, t)| format!("[{w}, {t:?}]")).collect();
    format!("[{}]", body.join(", "))
}

/// Random mix document: `procs` processes with `phases` phases each, a mix
/// of reuse and stream phases, hungry and flat curves, staggered starts.
pub fn random_mix_text<R: Rng>(rng: &mut R, name: &str, procs: u32, phases: u32, all_at_zero: bool) -> String {
    let mut s = format!("format_version = 1\nname = \"{name}\"\ncategory = \"heavy\"\n");
    for pid in 1..=procs {
        let start = if all_at_zero || rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0..50) as f64 * 1e6 };
        let _ = write!(s, "\n[[process]]\npid = {pid}\nstart_ns = {start:?}\n");
        for _ in 0..phases {
            let top = rng.gen_range(3..=11u32);
            let scale = rng.gen_range(0.001..0.02);
            let pts: Vec<(u32, f64)> =
                random_monotone_curve(rng, top).into_iter().map(|(w, t)| (w, t * scale)).collect();
            let mut pts = pts;
            if top < 11 {
                let last = pts.last().unwrap().1;
                pts.push((11, last));
            }
            let reuse = if rng.gen_bool(0.6) { "reuse" } else { "stream" };
            let fp = rng.gen_range(1u64..64) << 18;
            let _ = write!(
                s,
                "\n[[process.phase]]\nfootprint_bytes = {fp}\nreuse = \"{reuse}\"\nwork = {:?}\ncurve = {}\n",
                rng.gen_range(0.5..2.0),
                curve_text(&pts)
            );
        }
    }
    s
}

pub fn random_mix<R: Rng>(rng: &mut R, procs: u32, phases: u32, all_at_zero: bool) -> MixSpec {
    let text = random_mix_text(rng, "random", procs, phases, all_at_zero);
    parse_mix(&text, "random", None, &SystemConfig::default()).expect("generated mix parses")
}

// ---------------------------------------------------------------------------
// Independent allocator checks

/// Replays a trace into a fresh allocator group by group (releases, then the
/// batch of starts, then phase changes in pid order) and calls `check` after
/// every group.
pub fn drive_allocator(
    events: &[PhaseEvent],
    config: &SystemConfig,
    mut check: impl FnMut(f64, &Allocator) -> Result<(), String>,
) -> Result<Vec<AllocationRecord>, String> {
    let mut alloc = Allocator::new(config.clone()).map_err(|e| e.to_string())?;
    let mut pending: BTreeMap<Pid, (f64, u32)> = BTreeMap::new();
    let mut i = 0;
    while i < events.len() {
        let now = events[i].time_ns();
        let j = i + events[i..].iter().take_while(|e| e.time_ns() == now).count();
        let group = &events[i..j];
        for e in group {
            if let PhaseEvent::ProcessEnd { pid, .. } = e {
                alloc.release(now, *pid).map_err(|e| e.to_string())?;
            }
        }
        let mut batch = Vec::new();
        let mut changes = Vec::new();
        for e in group {
            match e {
                PhaseEvent::ProcessStart { pid, alpha, max_ways, .. } => {
                    pending.insert(*pid, (*alpha, *max_ways));
                }
                PhaseEvent::PhaseStart { pid, attrs, .. } => match pending.remove(pid) {
                    Some((alpha, max_ways)) => {
                        batch.push(Admission { pid: *pid, alpha, max_ways, phase: attrs.clone() })
                    }
                    None => changes.push((*pid, attrs.clone())),
                },
                _ => {}
            }
        }
        for r in alloc.admit_batch(now, batch) {
            r.map_err(|e| e.to_string())?;
        }
        changes.sort_by_key(|c| c.0);
        for (pid, attrs) in changes {
            alloc.pcca(now, pid, attrs).map_err(|e| e.to_string())?;
        }
        check(now, &alloc)?;
        i = j;
    }
    Ok(alloc.log().to_vec())
}

/// Structural invariants read from public state only.
pub struct InvariantChecker {
    sockets: BTreeMap<Pid, u32>,
    pub groups: usize,
}

impl InvariantChecker {
    pub fn new() -> Self {
        Self { sockets: BTreeMap::new(), groups: 0 }
    }

    pub fn check(&mut self, now: f64, a: &Allocator) -> Result<(), String> {
        self.groups += 1;
        let c = a.config();
        for s in 0..c.sockets {
            let clos: Vec<_> = a.clos_on(s).collect();
            for cl in &clos {
                let bits = cl.bitmask.bits();
                let len = bits.count_ones();
                if len == 0 || bits >> bits.trailing_zeros() != (1u64 << len) - 1 || bits >> c.ways_per_socket != 0 {
                    return Err(format!("t={now}: socket {s} CLOS {} mask {bits:#x} is not one run", cl.id));
                }
                if cl.members.len() > c.gfactor as usize {
                    return Err(format!("t={now}: socket {s} CLOS {} has {} members", cl.id, cl.members.len()));
                }
            }
            if !a.forced_overlap() {
                for x in &clos {
                    for y in &clos {
                        if x.id < y.id && x.bitmask.bits() & y.bitmask.bits() != 0 {
                            return Err(format!("t={now}: socket {s} CLOS {} and {} overlap", x.id, y.id));
                        }
                    }
                }
            }
        }
        for p in a.processes() {
            if *self.sockets.entry(p.pid).or_insert(p.socket) != p.socket {
                return Err(format!("t={now}: process {} moved socket", p.pid));
            }
            let width = a.mask_of(p.pid).unwrap().popcount();
            if p.req_ways > p.max_ways || width.min(p.req_ways) > p.max_ways {
                return Err(format!("t={now}: process {} holds more than max_ways", p.pid));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Hand-trace fixtures

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub description: String,
    #[serde(default)]
    pub config: Option<toml::Table>,
    #[serde(rename = "event")]
    pub events: Vec<FixtureEvent>,
    pub expect: Expect,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEvent {
    pub at: f64,
    pub kind: String,
    pub pid: Pid,
    pub alpha: Option<f64>,
    pub max_ways: Option<u32>,
    pub footprint: Option<u64>,
    pub reuse: Option<ReuseClass>,
    pub predicted_ns: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub records: Vec<String>,
    #[serde(default)]
    pub warnings: usize,
}

pub fn load_fixtures() -> Vec<(String, Fixture)> {
    let dir = fixtures().join("hand_traces");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let text = std::fs::read_to_string(&p).unwrap();
            let f: Fixture = toml::from_str(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, f)
        })
        .collect()
}

fn fixture_phase(e: &FixtureEvent, line_size: u32) -> ProbeAttributes {
    ProbeAttributes {
        phase_id: format!("p{}@{}", e.pid, e.at),
        footprint: FootprintValue::from_array_bytes([e.footprint.expect("footprint") as u128], line_size, true),
        reuse: e.reuse.expect("reuse"),
        timing: PhaseTiming::Fixed { ns: e.predicted_ns.expect("predicted_ns") },
        alpha: e.alpha.unwrap_or(0.0),
        max_ways: e.max_ways.unwrap_or(2),
    }
}

/// `time pid event socket clos ways req bitmask scenario satisfied changed`
pub fn record_line(r: &AllocationRecord) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {} {} {}",
        r.time_ns,
        r.pid,
        r.event.as_str(),
        r.socket,
        r.clos,
        r.ways,
        r.req_ways,
        r.bitmask,
        r.scenario.as_str(),
        r.satisfied,
        r.changed
    )
}

/// Drives the fixture; admissions sharing a timestamp form one batch.
pub fn run_fixture(f: &Fixture) -> Result<(Vec<String>, usize), String> {
    let base = SystemConfig::default();
    let config = match &f.config {
        Some(t) => base.with_overrides(t).map_err(|e| e.to_string())?,
        None => base,
    };
    let mut alloc = Allocator::new(config.clone()).map_err(|e| e.to_string())?;
    let mut i = 0;
    while i < f.events.len() {
        let e = &f.events[i];
        match e.kind.as_str() {
            "admit" => {
                let mut batch = Vec::new();
                while i < f.events.len() && f.events[i].kind == "admit" && f.events[i].at == e.at {
                    let a = &f.events[i];
                    batch.push(Admission {
                        pid: a.pid,
                        alpha: a.alpha.expect("alpha"),
                        max_ways: a.max_ways.expect("max_ways"),
                        phase: fixture_phase(a, config.line_size),
                    });
                    i += 1;
                }
                for r in alloc.admit_batch(e.at, batch) {
                    r.map_err(|err| err.to_string())?;
                }
                continue;
            }
            "phase" => {
                alloc.pcca(e.at, e.pid, fixture_phase(e, config.line_size)).map_err(|err| err.to_string())?;
            }
            "release" => alloc.release(e.at, e.pid).map_err(|err| err.to_string())?,
            other => return Err(format!("unknown event kind `{other}`")),
        }
        i += 1;
    }
    alloc.check_invariants()?;
    Ok((alloc.log().iter().map(record_line).collect(), alloc.warnings().len()))
}

/// First difference between expected and actual records, if any.
pub fn fixture_mismatch(f: &Fixture) -> Option<String> {
    let (got, warnings) = match run_fixture(f) {
        Ok(v) => v,
        Err(e) => return Some(e),
    };
    for (k, (want, have)) in f.expect.records.iter().zip(&got).enumerate() {
        if want != have {
            return Some(format!("record {}: expected `{want}`, got `{have}`", k + 1));
        }
    }
    if got.len() != f.expect.records.len() {
        return Some(format!("expected {} records, got {}: {:?}", f.expect.records.len(), got.len(), got));
    }
    if warnings != f.expect.warnings {
        return Some(format!("expected {} warnings, got {warnings}", f.expect.warnings));
    }
    None
}
