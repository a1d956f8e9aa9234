use std::collections::BTreeMap;

use super::{LoopError, LoopNest, Subscript};

/// Statement-instance cap for [`footprint_enumerate`].
pub const DEFAULT_ORACLE_CAP: u64 = 1_000_000;

/// Beyond this period the strided union is not swept byte by byte.
const PERIOD_CAP: u128 = 1 << 20;

/// Distinct memory touched by a loop nest.
///
/// Element `e` of an array occupies bytes `[e * size, (e + 1) * size)` and
/// every array starts on a line boundary. `lines` is the per-array byte count
/// rounded up to whole lines, summed over arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FootprintValue {
    pub bytes: u64,
    pub lines: u64,
    pub exact: bool,
}

impl FootprintValue {
    pub fn from_array_bytes(per_array: impl IntoIterator<Item = u128>, line_size: u32, exact: bool) -> Self {
        let line = line_size.max(1) as u128;
        let (bytes, lines) = per_array.into_iter().fold((0u128, 0u128), |(b, l), a| (b + a, l + a.div_ceil(line)));
        Self { bytes: saturate(bytes), lines: saturate(lines), exact }
    }
}

fn saturate(v: u128) -> u64 {
    u64::try_from(v).unwrap_or(u64::MAX)
}

/// Arithmetic progression of fixed-width byte blocks.
#[derive(Debug, Clone, Copy)]
struct Blocks {
    start: i128,
    stride: i128,
    count: i128,
    width: i128,
}

impl Blocks {
    fn hull(&self) -> (i128, i128) {
        (self.start, self.start + (self.count - 1) * self.stride + self.width)
    }

    fn dense(&self) -> bool {
        self.count == 1 || self.stride <= self.width
    }

    fn covers(&self, y: i128) -> bool {
        (y - self.start).rem_euclid(self.stride) < self.width
    }
}

/// Footprint from the access functions without walking the iteration space.
///
/// References whose subscript uses a single loop index are exact progressions;
/// a subscript mixing two or more indices contributes its bounding box and
/// clears `exact`. Per array, everything is unioned before counting.
pub fn footprint_closed_form(nest: &LoopNest, line_size: u32) -> Result<FootprintValue, LoopError> {
    let bounds = nest.bounds();
    let mut exact = !nest.has_estimated_bound();
    let mut per_array: BTreeMap<&str, Vec<Blocks>> = BTreeMap::new();

    for s in &nest.statements {
        if bounds[..s.depth].contains(&0) {
            continue;
        }
        for a in &s.accesses {
            let expr = match &a.subscript {
                Subscript::Affine(e) => e,
                Subscript::Indirect => return Err(LoopError::FootprintUnanalyzable(a.array.clone())),
            };
            let size = a.element_size as i128;
            let used: Vec<usize> = expr.used_levels().collect();
            let blocks = match used.as_slice() {
                [] => Blocks { start: expr.constant as i128 * size, stride: size, count: 1, width: size },
                [level] => {
                    let c = expr.coefficient(*level) as i128;
                    let n = bounds[*level] as i128;
                    let first = expr.constant as i128 + c.min(0) * (n - 1);
                    Blocks { start: first * size, stride: c.abs() * size, count: n, width: size }
                }
                _ => {
                    exact = false;
                    let (lo, hi) = used.iter().fold((expr.constant as i128, expr.constant as i128), |(lo, hi), &l| {
                        let span = expr.coefficient(l) as i128 * (bounds[l] as i128 - 1);
                        (lo + span.min(0), hi + span.max(0))
                    });
                    Blocks { start: lo * size, stride: size, count: hi - lo + 1, width: size }
                }
            };
            per_array.entry(a.array.as_str()).or_default().push(blocks);
        }
    }

    let mut totals = Vec::with_capacity(per_array.len());
    for blocks in per_array.values() {
        let (count, counted_exactly) = union_size(blocks);
        exact &= counted_exactly;
        totals.push(count);
    }
    Ok(FootprintValue::from_array_bytes(totals, line_size, exact))
}

/// Size of the union of block progressions; the flag is false when a segment
/// had to be over-approximated by its width.
fn union_size(blocks: &[Blocks]) -> (u128, bool) {
    let mut cuts: Vec<i128> = blocks
        .iter()
        .flat_map(|b| {
            let (lo, hi) = b.hull();
            [lo, hi]
        })
        .collect();
    cuts.sort_unstable();
    cuts.dedup();

    let mut total = 0u128;
    let mut exact = true;
    for w in cuts.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let active: Vec<&Blocks> = blocks
            .iter()
            .filter(|b| {
                let (lo, hi) = b.hull();
                lo <= x0 && hi >= x1
            })
            .collect();
        if active.is_empty() {
            continue;
        }
        let len = x1 - x0;
        if active.iter().any(|b| b.dense()) {
            total += len as u128;
            continue;
        }
        let period = active.iter().try_fold(1i128, |p, b| {
            let l = lcm(p, b.stride);
            (l <= PERIOD_CAP as i128).then_some(l)
        });
        let Some(period) = period else {
            exact = false;
            total += len as u128;
            continue;
        };
        let covered = |from: i128, to: i128| (from..to).filter(|&y| active.iter().any(|b| b.covers(y))).count() as u128;
        let full = len / period;
        let per_period = if full > 0 { covered(x0, x0 + period) } else { 0 };
        total += full as u128 * per_period + covered(x0 + full * period, x1);
    }
    (total, exact)
}

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.abs()
}

fn lcm(a: i128, b: i128) -> i128 {
    a / gcd(a, b) * b
}

/// Reference footprint obtained by visiting every iteration.
pub fn footprint_enumerate(nest: &LoopNest, line_size: u32, cap: u64) -> Result<FootprintValue, LoopError> {
    let visits: u128 = (0..nest.statements.len()).map(|s| nest.instances(s)).sum();
    if visits > cap as u128 {
        return Err(LoopError::OracleTooLarge { visits, cap });
    }
    let mut ranges: BTreeMap<&str, Vec<(i128, i128)>> = BTreeMap::new();
    nest.walk(|s, a, _, element| {
        let access = &nest.statements[s].accesses[a];
        let size = access.element_size as i128;
        ranges.entry(access.array.as_str()).or_default().push((element * size, element * size + size));
    });
    let totals = ranges.into_values().map(|mut r| {
        r.sort_unstable();
        let mut bytes = 0u128;
        let mut reach = i128::MIN;
        for (lo, hi) in r {
            let lo = lo.max(reach);
            if hi > lo {
                bytes += (hi - lo) as u128;
            }
            reach = reach.max(hi);
        }
        bytes
    });
    Ok(FootprintValue::from_array_bytes(totals.collect::<Vec<_>>(), line_size, true))
}
