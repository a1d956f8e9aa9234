//! Static reuse distance (SRD).
//!
//! For a pair of references `source -> sink` on the same array, the SRD is
//! the number of memory instructions issued between an access by `source`
//! and the next access by `sink` to the same element, minimised over the
//! iteration space. Reuse carried by loop `c` is measured in the traffic of
//! the loops nested inside `c`: only statements deeper than `c` are counted,
//! unless `c` is the deepest level, in which case its body is counted. The
//! interval is half-open, `[source access, sink access)`.
//!
//! With `for i { S1: A[i]; S2: A[i+2]; for j < N { S3: B[j] } }` the pair
//! `S2 -> S1` is carried by `i` at distance 2 and its SRD is `2 * N`.

use std::collections::BTreeMap;

use super::{AffineExpr, LoopNest, ReuseClass};

/// Node budget for the reuse-vector search; past it a pair is reported as
/// [`ReuseDistance::NonUniform`].
const SEARCH_BUDGET: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccessRef {
    pub statement: usize,
    pub access: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReuseDistance {
    Static {
        /// 1-based carrying loop; `None` for reuse inside one iteration.
        carrier: Option<usize>,
        /// Iteration distance over the loops common to both references.
        iteration_distance: Vec<i64>,
        srd: u64,
    },
    /// The references may touch the same data but not through a uniform
    /// reuse vector; treated like an unanalyzable access.
    NonUniform,
}

impl ReuseDistance {
    pub fn srd(&self) -> Option<u64> {
        match self {
            ReuseDistance::Static { srd, .. } => Some(*srd),
            ReuseDistance::NonUniform => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReusePair {
    pub array: String,
    pub source: AccessRef,
    pub sink: AccessRef,
    pub distance: ReuseDistance,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SrdReport {
    /// Pairs with reuse, ordered by (array, source, sink).
    pub pairs: Vec<ReusePair>,
    /// The nest has at least one indirect access.
    pub indirect: bool,
}

impl SrdReport {
    pub fn pair(&self, source: AccessRef, sink: AccessRef) -> Option<&ReusePair> {
        self.pairs.iter().find(|p| p.source == source && p.sink == sink)
    }

    pub fn max_srd(&self) -> Option<u64> {
        self.pairs.iter().filter_map(|p| p.distance.srd()).max()
    }
}

/// Reuse if any SRD exceeds `delta`, or anything was unanalyzable.
pub fn classify_reuse(report: &SrdReport, delta: u64) -> ReuseClass {
    let reuse = report.indirect
        || report.pairs.iter().any(|p| match p.distance {
            ReuseDistance::Static { srd, .. } => srd > delta,
            ReuseDistance::NonUniform => true,
        });
    if reuse {
        ReuseClass::Reuse
    } else {
        ReuseClass::Stream
    }
}

pub fn compute_srd(nest: &LoopNest) -> SrdReport {
    let layout = Layout::new(nest);
    let mut refs: BTreeMap<&str, Vec<(AccessRef, &AffineExpr)>> = BTreeMap::new();
    for (si, s) in nest.statements.iter().enumerate() {
        for (ai, a) in s.accesses.iter().enumerate() {
            if let Some(expr) = a.affine() {
                refs.entry(a.array.as_str()).or_default().push((AccessRef { statement: si, access: ai }, expr));
            }
        }
    }
    let mut pairs = Vec::new();
    for (array, list) in &refs {
        for &(source, src_expr) in list {
            for &(sink, sink_expr) in list {
                if let Some(distance) = layout.pair_distance(source, src_expr, sink, sink_expr) {
                    pairs.push(ReusePair { array: array.to_string(), source, sink, distance });
                }
            }
        }
    }
    SrdReport { pairs, indirect: nest.has_indirect() }
}

/// Program-order bookkeeping used to turn an iteration distance into an
/// instruction count.
struct Layout {
    bounds: Vec<i128>,
    depths: Vec<usize>,
    accesses: Vec<i128>,
    deepest: usize,
}

impl Layout {
    fn new(nest: &LoopNest) -> Self {
        Self {
            bounds: nest.bounds().into_iter().map(|b| b as i128).collect(),
            depths: nest.statements.iter().map(|s| s.depth).collect(),
            accesses: nest.statements.iter().map(|s| s.accesses.len() as i128).collect(),
            deepest: nest.max_statement_depth(),
        }
    }

    fn weight(&self, s: usize, threshold: usize) -> i128 {
        if self.depths[s] >= threshold {
            self.accesses[s]
        } else {
            0
        }
    }

    /// Counted instructions per iteration of each loop (index 0 = outermost).
    fn per_iteration(&self, threshold: usize) -> Vec<i128> {
        let n = self.bounds.len();
        let mut per = vec![0i128; n + 1];
        for m in (0..n).rev() {
            let direct: i128 =
                (0..self.depths.len()).filter(|&s| self.depths[s] == m + 1).map(|s| self.weight(s, threshold)).sum();
            let inner = if m + 1 < n { self.bounds[m + 1] * per[m + 1] } else { 0 };
            per[m] = direct + inner;
        }
        per.truncate(n);
        per
    }

    fn first_deeper(&self, level: usize) -> Option<usize> {
        self.depths.iter().position(|&d| d > level)
    }

    /// Counted instructions issued before access `r` of statement `s` at
    /// iteration `x` (one entry per enclosing loop).
    fn prefix(&self, threshold: usize, per: &[i128], s: usize, x: &[i128], r: usize) -> i128 {
        let k = self.depths[s];
        let mut count = 0;
        for m in 0..k {
            count += x[m] * per[m];
            let level = m + 1;
            let limit = if level < k { self.first_deeper(level).unwrap_or(s) } else { s };
            count += (0..limit).filter(|&t| self.depths[t] == level).map(|t| self.weight(t, threshold)).sum::<i128>();
            if level == k {
                if let Some(block) = self.first_deeper(level) {
                    if block < s && level < self.bounds.len() {
                        count += self.bounds[level] * per[level];
                    }
                }
            }
        }
        if self.weight(s, threshold) > 0 {
            count += r as i128;
        }
        count
    }

    fn pair_distance(
        &self,
        source: AccessRef,
        src: &AffineExpr,
        sink: AccessRef,
        dst: &AffineExpr,
    ) -> Option<ReuseDistance> {
        let (ka, kb) = (self.depths[source.statement], self.depths[sink.statement]);
        if self.bounds[..ka].contains(&0) || self.bounds[..kb].contains(&0) {
            return None;
        }
        let k = ka.min(kb);
        let uniform = (0..k).all(|m| src.coefficient(m) == dst.coefficient(m))
            && (k..ka).all(|m| src.coefficient(m) == 0)
            && (k..kb).all(|m| dst.coefficient(m) == 0);
        if !uniform {
            return self.may_intersect(src, ka, dst, kb).then_some(ReuseDistance::NonUniform);
        }

        let delta = src.constant as i128 - dst.constant as i128;
        let coefs: Vec<i128> = (0..k).map(|m| src.coefficient(m) as i128).collect();
        let mut best: Option<(i128, Option<usize>, Vec<i128>)> = None;
        let mut consider = |count: i128, carrier: Option<usize>, d: Vec<i128>| {
            if best.as_ref().is_none_or(|(b, _, _)| count < *b) {
                best = Some((count, carrier, d));
            }
        };

        if delta == 0 && sink > source {
            let threshold = (k + 1).min(self.deepest);
            let zero = vec![0i128; k];
            consider(self.gap(threshold, source, sink, &zero), None, zero);
        }
        let mut budget = SEARCH_BUDGET;
        for carrier in (1..=k).rev() {
            let threshold = (carrier + 1).min(self.deepest);
            let per = self.per_iteration(threshold);
            let ranges: Vec<(i128, i128)> = (0..k)
                .map(|m| match (m + 1).cmp(&carrier) {
                    std::cmp::Ordering::Less => (0, 0),
                    std::cmp::Ordering::Equal => (1, self.bounds[m] - 1),
                    std::cmp::Ordering::Greater => (-(self.bounds[m] - 1), self.bounds[m] - 1),
                })
                .collect();
            if ranges[carrier - 1].1 < 1 {
                continue;
            }
            let base = self.gap(threshold, source, sink, &vec![0; k]);
            let mut search =
                Search { coefs: &coefs, weights: &per[..k], ranges: &ranges, budget: &mut budget, best: None };
            search.run(delta);
            if *search.budget == 0 {
                return Some(ReuseDistance::NonUniform);
            }
            if let Some((cost, d)) = search.best {
                consider(base + cost, Some(carrier), d);
            }
        }

        best.map(|(count, carrier, d)| ReuseDistance::Static {
            carrier,
            iteration_distance: d.iter().map(|&v| v as i64).collect(),
            srd: u64::try_from(count.max(0)).unwrap_or(u64::MAX),
        })
    }

    /// Counted instructions between the source at the origin (its private
    /// loops at their last iteration) and the sink at `d` (private loops at
    /// their first iteration).
    fn gap(&self, threshold: usize, source: AccessRef, sink: AccessRef, d: &[i128]) -> i128 {
        let per = self.per_iteration(threshold);
        let k = d.len();
        let origin: Vec<i128> = d.iter().map(|&v| (-v).max(0)).collect();
        let mut xa = origin.clone();
        xa.extend((k..self.depths[source.statement]).map(|m| self.bounds[m] - 1));
        let mut xb: Vec<i128> = origin.iter().zip(d).map(|(o, v)| o + v).collect();
        xb.extend((k..self.depths[sink.statement]).map(|_| 0));
        self.prefix(threshold, &per, sink.statement, &xb, sink.access)
            - self.prefix(threshold, &per, source.statement, &xa, source.access)
    }

    /// Range and gcd test for references with different access functions.
    fn may_intersect(&self, a: &AffineExpr, ka: usize, b: &AffineExpr, kb: usize) -> bool {
        let span = |e: &AffineExpr, k: usize| {
            (0..k).fold((e.constant as i128, e.constant as i128), |(lo, hi), m| {
                let v = e.coefficient(m) as i128 * (self.bounds[m] - 1);
                (lo + v.min(0), hi + v.max(0))
            })
        };
        let (alo, ahi) = span(a, ka);
        let (blo, bhi) = span(b, kb);
        if ahi < blo || bhi < alo {
            return false;
        }
        let g = (0..ka).map(|m| a.coefficient(m) as i128).chain((0..kb).map(|m| b.coefficient(m) as i128)).fold(0, gcd);
        let diff = b.constant as i128 - a.constant as i128;
        if g == 0 {
            diff == 0
        } else {
            diff % g == 0
        }
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Branch and bound for `min sum(w_m d_m)` subject to `sum(c_m d_m) = target`
/// and `lo_m <= d_m <= hi_m`. All weights are non-negative.
struct Search<'a> {
    coefs: &'a [i128],
    weights: &'a [i128],
    ranges: &'a [(i128, i128)],
    budget: &'a mut u64,
    best: Option<(i128, Vec<i128>)>,
}

impl Search<'_> {
    fn run(&mut self, target: i128) {
        let mut d = Vec::with_capacity(self.coefs.len());
        self.descend(0, target, 0, &mut d);
    }

    fn floor_cost(&self, from: usize) -> i128 {
        (from..self.coefs.len()).map(|m| self.weights[m] * self.ranges[m].0).sum()
    }

    fn reachable(&self, from: usize, target: i128) -> bool {
        let (mut lo, mut hi, mut g) = (0i128, 0i128, 0i128);
        for m in from..self.coefs.len() {
            let (a, b) = (self.coefs[m] * self.ranges[m].0, self.coefs[m] * self.ranges[m].1);
            lo += a.min(b);
            hi += a.max(b);
            g = gcd(g, self.coefs[m]);
        }
        lo <= target && target <= hi && if g == 0 { target == 0 } else { target % g == 0 }
    }

    fn descend(&mut self, m: usize, target: i128, cost: i128, d: &mut Vec<i128>) {
        if *self.budget == 0 {
            return;
        }
        *self.budget -= 1;
        if m == self.coefs.len() {
            if target == 0 && self.best.as_ref().is_none_or(|(b, _)| cost < *b) {
                self.best = Some((cost, d.clone()));
            }
            return;
        }
        let (lo, hi) = self.ranges[m];
        let (c, w) = (self.coefs[m], self.weights[m]);
        let rest_floor = self.floor_cost(m + 1);
        let last_nonzero = (m + 1..self.coefs.len()).all(|t| self.coefs[t] == 0);
        if c != 0 && last_nonzero {
            // The remaining equation fixes this variable.
            if target % c == 0 {
                let v = target / c;
                if (lo..=hi).contains(&v) {
                    d.push(v);
                    self.descend(m + 1, 0, cost + w * v, d);
                    d.pop();
                }
            }
            return;
        }
        if c == 0 {
            d.push(lo);
            self.descend(m + 1, target, cost + w * lo, d);
            d.pop();
            return;
        }
        let mut v = lo;
        while v <= hi {
            if *self.budget == 0 {
                return;
            }
            let partial = cost + w * v;
            if let Some((b, _)) = &self.best {
                if partial + rest_floor >= *b {
                    break;
                }
            }
            if self.reachable(m + 1, target - c * v) {
                d.push(v);
                self.descend(m + 1, target - c * v, partial, d);
                d.pop();
            } else {
                *self.budget -= 1;
            }
            v += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_model::{AccessKind, LoopLevel, MemoryAccess, Statement};

    fn shifted_pair_nest(m: u64, n: u64) -> LoopNest {
        LoopNest::new(
            "reuse-example",
            vec![LoopLevel::new("i", m), LoopLevel::new("j", n)],
            vec![
                Statement::new(1, vec![MemoryAccess::read("A", 0, vec![1], 8)]),
                Statement::new(1, vec![MemoryAccess::read("A", 2, vec![1], 8)]),
                Statement::new(2, vec![MemoryAccess::read("B", 0, vec![0, 1], 8)]),
            ],
        )
        .unwrap()
    }

    const S1: AccessRef = AccessRef { statement: 0, access: 0 };
    const S2: AccessRef = AccessRef { statement: 1, access: 0 };
    const S3: AccessRef = AccessRef { statement: 2, access: 0 };

    #[test]
    fn two_iteration_reuse_spans_two_inner_loops() {
        let report = compute_srd(&shifted_pair_nest(50, 10));
        let pair = report.pair(S2, S1).expect("S2 -> S1 reuse");
        assert_eq!(pair.distance, ReuseDistance::Static { carrier: Some(1), iteration_distance: vec![2], srd: 20 });
        assert!(report.pair(S1, S2).is_none());
        assert!(report.pair(S1, S1).is_none());
        let b = report.pair(S3, S3).unwrap();
        assert_eq!(b.distance, ReuseDistance::Static { carrier: Some(1), iteration_distance: vec![1, 0], srd: 10 });
    }

    #[test]
    fn injective_subscript_has_no_reuse() {
        let nest = LoopNest::new(
            "stream",
            vec![LoopLevel::new("i", 100)],
            vec![Statement::new(1, vec![MemoryAccess::read("A", 0, vec![1], 8)])],
        )
        .unwrap();
        let report = compute_srd(&nest);
        assert!(report.pairs.is_empty());
        assert_eq!(classify_reuse(&report, 1000), ReuseClass::Stream);
    }

    #[test]
    fn scalar_reread_every_iteration() {
        let nest = LoopNest::new(
            "scalar",
            vec![LoopLevel::new("i", 5)],
            vec![Statement::new(
                1,
                vec![MemoryAccess::read("A", 0, vec![], 8), MemoryAccess::read("X", 0, vec![1], 8)],
            )],
        )
        .unwrap();
        let report = compute_srd(&nest);
        let a0 = AccessRef { statement: 0, access: 0 };
        assert_eq!(report.pair(a0, a0).unwrap().distance.srd(), Some(2));
    }

    #[test]
    fn indirect_forces_reuse() {
        let nest = LoopNest::new(
            "gather",
            vec![LoopLevel::new("i", 5)],
            vec![Statement::new(1, vec![MemoryAccess::indirect("A", 8, AccessKind::Read)])],
        )
        .unwrap();
        let report = compute_srd(&nest);
        assert!(report.indirect);
        assert_eq!(classify_reuse(&report, u64::MAX), ReuseClass::Reuse);
    }

    #[test]
    fn disjoint_parities_do_not_reuse() {
        let nest = LoopNest::new(
            "parity",
            vec![LoopLevel::new("i", 8)],
            vec![Statement::new(
                1,
                vec![MemoryAccess::read("A", 0, vec![2], 8), MemoryAccess::read("A", 1, vec![4], 8)],
            )],
        )
        .unwrap();
        assert!(compute_srd(&nest).pairs.is_empty());
    }

    #[test]
    fn different_strides_are_non_uniform() {
        let nest = LoopNest::new(
            "mixed",
            vec![LoopLevel::new("i", 8)],
            vec![Statement::new(
                1,
                vec![MemoryAccess::read("A", 0, vec![1], 8), MemoryAccess::read("A", 0, vec![2], 8)],
            )],
        )
        .unwrap();
        let report = compute_srd(&nest);
        assert!(report.pairs.iter().any(|p| p.distance == ReuseDistance::NonUniform));
        assert_eq!(classify_reuse(&report, u64::MAX), ReuseClass::Reuse);
    }

    #[test]
    fn read_then_write_same_iteration() {
        // A[i] = A[i] + 1: the write reuses the read one instruction later.
        let nest = LoopNest::new(
            "update",
            vec![LoopLevel::new("i", 4)],
            vec![Statement::new(
                1,
                vec![MemoryAccess::read("A", 0, vec![1], 8), MemoryAccess::write("A", 0, vec![1], 8)],
            )],
        )
        .unwrap();
        let report = compute_srd(&nest);
        let (r, w) = (AccessRef { statement: 0, access: 0 }, AccessRef { statement: 0, access: 1 });
        assert_eq!(
            report.pair(r, w).unwrap().distance,
            ReuseDistance::Static { carrier: None, iteration_distance: vec![0], srd: 1 }
        );
        assert!(report.pair(w, r).is_none());
    }

    #[test]
    fn threshold_rule() {
        let report = SrdReport {
            pairs: vec![ReusePair {
                array: "A".into(),
                source: S1,
                sink: S1,
                distance: ReuseDistance::Static { carrier: Some(1), iteration_distance: vec![1], srd: 20 },
            }],
            indirect: false,
        };
        assert_eq!(classify_reuse(&report, 1000), ReuseClass::Stream);
        assert_eq!(classify_reuse(&report, 19), ReuseClass::Reuse);
    }
}
