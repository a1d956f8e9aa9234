//! Normalized loop nests and their static cache attributes.
//!
//! A [`LoopNest`] is a single chain of normalized loops (lower bound 0,
//! unit step). Statements carry the depth at which they sit; the statement
//! list is in program order, so a statement at depth `d` listed before the
//! first deeper statement runs before loop `d + 1`, and one listed after the
//! deeper block runs after it.

mod footprint;
mod merge;
mod srd;

pub use footprint::{footprint_closed_form, footprint_enumerate, FootprintValue, DEFAULT_ORACLE_CAP};
pub use merge::merge_nest_attributes;
pub use srd::{classify_reuse, compute_srd, AccessRef, ReuseDistance, ReusePair, SrdReport};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("loop nest `{0}` has no loops")]
    NoLoops(String),
    #[error("statement {statement} has depth {depth}, nest has {loops} loops")]
    BadDepth { statement: usize, depth: usize, loops: usize },
    #[error("statements nested below depth {0} are not contiguous; distribute the loop first")]
    NotDistributed(usize),
    #[error(
        "statement {statement} access {access}: subscript references loop {loop_level} outside its enclosing loops"
    )]
    ForeignIndex { statement: usize, access: usize, loop_level: usize },
    #[error("statement {statement} access {access}: unsupported element size {size}")]
    ElementSize { statement: usize, access: usize, size: u32 },
    #[error("footprint cannot be derived: indirect subscript on array `{0}`")]
    FootprintUnanalyzable(String),
    #[error("enumeration would visit {visits} statement instances (cap {cap})")]
    OracleTooLarge { visits: u128, cap: u64 },
    #[error("cannot merge an empty attribute list")]
    MergeEmpty,
}

/// Upper bound of a normalized loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundValue {
    Concrete(u64),
    /// Bound approximated from test inputs (non-affine loops).
    Estimated(u64),
}

impl BoundValue {
    pub fn value(self) -> u64 {
        match self {
            BoundValue::Concrete(v) | BoundValue::Estimated(v) => v,
        }
    }

    pub fn is_estimated(self) -> bool {
        matches!(self, BoundValue::Estimated(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopLevel {
    pub index_name: String,
    pub upper_bound: BoundValue,
}

impl LoopLevel {
    pub fn new(index_name: impl Into<String>, bound: u64) -> Self {
        Self { index_name: index_name.into(), upper_bound: BoundValue::Concrete(bound) }
    }

    pub fn estimated(index_name: impl Into<String>, bound: u64) -> Self {
        Self { index_name: index_name.into(), upper_bound: BoundValue::Estimated(bound) }
    }
}

/// `constant + sum(coefficients[k] * index_k)`, outermost loop first.
///
/// Missing trailing coefficients are zero.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AffineExpr {
    pub constant: i64,
    pub coefficients: Vec<i64>,
}

impl AffineExpr {
    pub fn new(constant: i64, coefficients: Vec<i64>) -> Self {
        Self { constant, coefficients }
    }

    pub fn coefficient(&self, level: usize) -> i64 {
        self.coefficients.get(level).copied().unwrap_or(0)
    }

    pub fn eval(&self, iteration: &[u64]) -> i128 {
        self.coefficients.iter().zip(iteration).fold(self.constant as i128, |acc, (&c, &x)| acc + c as i128 * x as i128)
    }

    /// Loop levels with a non-zero coefficient.
    pub fn used_levels(&self) -> impl Iterator<Item = usize> + '_ {
        self.coefficients.iter().enumerate().filter(|(_, &c)| c != 0).map(|(l, _)| l)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Subscript {
    Affine(AffineExpr),
    Indirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryAccess {
    pub array: String,
    pub subscript: Subscript,
    pub element_size: u32,
    pub kind: AccessKind,
}

impl MemoryAccess {
    pub fn read(array: impl Into<String>, constant: i64, coefficients: Vec<i64>, element_size: u32) -> Self {
        Self {
            array: array.into(),
            subscript: Subscript::Affine(AffineExpr::new(constant, coefficients)),
            element_size,
            kind: AccessKind::Read,
        }
    }

    pub fn write(array: impl Into<String>, constant: i64, coefficients: Vec<i64>, element_size: u32) -> Self {
        Self { kind: AccessKind::Write, ..Self::read(array, constant, coefficients, element_size) }
    }

    pub fn indirect(array: impl Into<String>, element_size: u32, kind: AccessKind) -> Self {
        Self { array: array.into(), subscript: Subscript::Indirect, element_size, kind }
    }

    pub fn affine(&self) -> Option<&AffineExpr> {
        match &self.subscript {
            Subscript::Affine(e) => Some(e),
            Subscript::Indirect => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    /// Number of enclosing loops (1 = directly in the outermost loop).
    pub depth: usize,
    pub accesses: Vec<MemoryAccess>,
}

impl Statement {
    pub fn new(depth: usize, accesses: Vec<MemoryAccess>) -> Self {
        Self { depth, accesses }
    }
}

/// Whether reuse in a phase is negligible (stream) or significant (reuse).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReuseClass {
    Stream,
    Reuse,
}

impl fmt::Display for ReuseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReuseClass::Stream => "stream",
            ReuseClass::Reuse => "reuse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopNest {
    pub name: String,
    pub loops: Vec<LoopLevel>,
    pub statements: Vec<Statement>,
}

pub const ELEMENT_SIZES: [u32; 5] = [1, 2, 4, 8, 16];

impl LoopNest {
    /// Builds a nest and checks its structural invariants.
    pub fn new(name: impl Into<String>, loops: Vec<LoopLevel>, statements: Vec<Statement>) -> Result<Self, LoopError> {
        let nest = Self { name: name.into(), loops, statements };
        nest.validate()?;
        Ok(nest)
    }

    pub fn validate(&self) -> Result<(), LoopError> {
        let n = self.loops.len();
        if n == 0 {
            return Err(LoopError::NoLoops(self.name.clone()));
        }
        for (si, s) in self.statements.iter().enumerate() {
            if s.depth == 0 || s.depth > n {
                return Err(LoopError::BadDepth { statement: si, depth: s.depth, loops: n });
            }
            for (ai, a) in s.accesses.iter().enumerate() {
                if !ELEMENT_SIZES.contains(&a.element_size) {
                    return Err(LoopError::ElementSize { statement: si, access: ai, size: a.element_size });
                }
                if let Some(expr) = a.affine() {
                    if let Some(l) = expr.used_levels().find(|&l| l >= s.depth) {
                        return Err(LoopError::ForeignIndex { statement: si, access: ai, loop_level: l + 1 });
                    }
                }
            }
        }
        // Statements deeper than `d` must form one contiguous block for every d.
        for d in 1..n {
            let deeper: Vec<usize> =
                self.statements.iter().enumerate().filter(|(_, s)| s.depth > d).map(|(i, _)| i).collect();
            if let (Some(first), Some(last)) = (deeper.first(), deeper.last()) {
                if last - first + 1 != deeper.len() {
                    return Err(LoopError::NotDistributed(d));
                }
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.loops.len()
    }

    pub fn bounds(&self) -> Vec<u64> {
        self.loops.iter().map(|l| l.upper_bound.value()).collect()
    }

    pub fn has_estimated_bound(&self) -> bool {
        self.loops.iter().any(|l| l.upper_bound.is_estimated())
    }

    pub fn has_indirect(&self) -> bool {
        self.statements.iter().flat_map(|s| &s.accesses).any(|a| a.affine().is_none())
    }

    /// Deepest statement depth, or 0 for a nest without statements.
    pub fn max_statement_depth(&self) -> usize {
        self.statements.iter().map(|s| s.depth).max().unwrap_or(0)
    }

    /// Number of dynamic instances of statement `s`.
    pub fn instances(&self, s: usize) -> u128 {
        self.loops[..self.statements[s].depth].iter().map(|l| l.upper_bound.value() as u128).product()
    }

    /// Walks every dynamic memory access in program order.
    ///
    /// The callback receives the statement index, the access index, the
    /// iteration vector of the statement's enclosing loops, and the element
    /// index touched. Indirect accesses are skipped.
    pub fn walk(&self, mut visit: impl FnMut(usize, usize, &[u64], i128)) {
        let mut iteration = Vec::with_capacity(self.depth());
        self.walk_level(0, 0, self.statements.len(), &mut iteration, &mut visit);
    }

    fn walk_level(
        &self,
        level: usize,
        from: usize,
        to: usize,
        iteration: &mut Vec<u64>,
        visit: &mut impl FnMut(usize, usize, &[u64], i128),
    ) {
        let bound = self.loops[level].upper_bound.value();
        for x in 0..bound {
            iteration.push(x);
            let mut si = from;
            while si < to {
                let s = &self.statements[si];
                if s.depth == level + 1 {
                    for (ai, a) in s.accesses.iter().enumerate() {
                        if let Some(expr) = a.affine() {
                            visit(si, ai, iteration, expr.eval(iteration));
                        }
                    }
                    si += 1;
                } else {
                    let end = (si..to).find(|&j| self.statements[j].depth <= level + 1).unwrap_or(to);
                    self.walk_level(level + 1, si, end, iteration, visit);
                    si = end;
                }
            }
            iteration.pop();
        }
    }
}

/// Static attributes of one nest: footprint and reuse class.
#[derive(Debug, Clone, PartialEq)]
pub struct NestAnalysis {
    pub phase_id: String,
    pub footprint: FootprintValue,
    pub reuse: ReuseClass,
}

/// Footprint and reuse class of a nest.
///
/// When a subscript is indirect the footprint falls back to the sum of the
/// declared array extents (in bytes) of every array the nest touches, marked
/// inexact; a missing extent leaves the footprint unanalyzable.
pub fn analyze_nest(
    nest: &LoopNest,
    extents: &BTreeMap<String, u64>,
    line_size: u32,
    delta: u64,
) -> Result<NestAnalysis, LoopError> {
    let footprint = match footprint_closed_form(nest, line_size) {
        Ok(fp) => fp,
        Err(LoopError::FootprintUnanalyzable(_)) => {
            let arrays: std::collections::BTreeSet<&str> =
                nest.statements.iter().flat_map(|s| &s.accesses).map(|a| a.array.as_str()).collect();
            let mut per_array = Vec::with_capacity(arrays.len());
            for a in arrays {
                match extents.get(a) {
                    Some(&bytes) => per_array.push(bytes as u128),
                    None => return Err(LoopError::FootprintUnanalyzable(a.to_string())),
                }
            }
            FootprintValue::from_array_bytes(per_array, line_size, false)
        }
        Err(e) => return Err(e),
    };
    let reuse = classify_reuse(&compute_srd(nest), delta);
    Ok(NestAnalysis { phase_id: nest.name.clone(), footprint, reuse })
}
