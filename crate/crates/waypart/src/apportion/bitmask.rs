use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitmaskError {
    #[error("{requested} ways requested on a {ways}-way socket")]
    Overflow { requested: u32, ways: u32 },
    #[error("a capacity bitmask needs at least one way")]
    Empty,
    #[error("mask {mask:#x} is not one contiguous run of ways")]
    NotContiguous { mask: u64 },
}

/// Contiguous run of cache ways, `start..start + len`, on a socket with
/// `total` ways. Bit `w` of [`CapacityBitmask::bits`] stands for way `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CapacityBitmask {
    start: u32,
    len: u32,
    total: u32,
}

impl CapacityBitmask {
    pub fn new(start: u32, len: u32, total: u32) -> Result<Self, BitmaskError> {
        if len == 0 {
            return Err(BitmaskError::Empty);
        }
        if start + len > total || total > 64 {
            return Err(BitmaskError::Overflow { requested: start + len, ways: total });
        }
        Ok(Self { start, len, total })
    }

    pub fn from_bits(mask: u64, total: u32) -> Result<Self, BitmaskError> {
        if mask == 0 {
            return Err(BitmaskError::Empty);
        }
        let start = mask.trailing_zeros();
        let len = (mask >> start).trailing_ones();
        if mask >> start >> len != 0 {
            return Err(BitmaskError::NotContiguous { mask });
        }
        Self::new(start, len, total)
    }

    /// Every way of the socket.
    pub fn full(total: u32) -> Self {
        Self { start: 0, len: total, total }
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    /// One past the highest way.
    pub fn end(&self) -> u32 {
        self.start + self.len
    }

    pub fn popcount(&self) -> u32 {
        self.len
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn bits(&self) -> u64 {
        run(self.start, self.len)
    }

    pub fn contains(&self, way: u32) -> bool {
        (self.start..self.end()).contains(&way)
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.bits() & other.bits() != 0
    }

    /// Hex with one digit per four ways of the socket, e.g. `0x00f`.
    pub fn to_hex(&self) -> String {
        format!("{:#0width$x}", self.bits(), width = self.total.div_ceil(4) as usize + 2)
    }
}

impl fmt::Display for CapacityBitmask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub(crate) fn run(start: u32, len: u32) -> u64 {
    if len == 0 {
        0
    } else if len >= 64 {
        u64::MAX
    } else {
        ((1u64 << len) - 1) << start
    }
}

/// Lowest start of a run of `len` ways that avoids every bit of `used`.
pub fn first_fit(used: u64, len: u32, total: u32) -> Option<u32> {
    (0..=total.checked_sub(len)?).find(|&s| run(s, len) & used == 0)
}

/// Longest free run as `(start, len)`, lowest start on ties.
pub fn largest_free_run(used: u64, total: u32) -> Option<(u32, u32)> {
    let mut best: Option<(u32, u32)> = None;
    let mut w = 0;
    while w < total {
        if used >> w & 1 == 1 {
            w += 1;
            continue;
        }
        let s = w;
        while w < total && used >> w & 1 == 0 {
            w += 1;
        }
        if best.is_none_or(|(_, l)| w - s > l) {
            best = Some((s, w - s));
        }
    }
    best
}

/// First-fit mask of `ways` ways on a socket where `used` is taken.
pub fn generate_bitmask(used: u64, ways: u32, total: u32) -> Result<Option<CapacityBitmask>, BitmaskError> {
    if ways > total {
        return Err(BitmaskError::Overflow { requested: ways, ways: total });
    }
    if ways == 0 {
        return Err(BitmaskError::Empty);
    }
    Ok(first_fit(used, ways, total).map(|s| CapacityBitmask { start: s, len: ways, total }))
}
