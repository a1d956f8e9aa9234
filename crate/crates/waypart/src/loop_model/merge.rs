use super::{FootprintValue, LoopError, ReuseClass};
use crate::sensitivity::ProbeAttributes;

/// Folds inner-loop bundles into the probe hoisted to the outermost loop.
///
/// The first element is the outermost loop: its phase id and timing are
/// kept. The nest is a reuse phase if any member is; footprints add up;
/// alpha and max-ways take the member maximum.
pub fn merge_nest_attributes(inner: &[ProbeAttributes]) -> Result<ProbeAttributes, LoopError> {
    let (outer, rest) = inner.split_first().ok_or(LoopError::MergeEmpty)?;
    let mut merged = outer.clone();
    for a in rest {
        if a.reuse == ReuseClass::Reuse {
            merged.reuse = ReuseClass::Reuse;
        }
        merged.footprint = FootprintValue {
            bytes: merged.footprint.bytes.saturating_add(a.footprint.bytes),
            lines: merged.footprint.lines.saturating_add(a.footprint.lines),
            exact: merged.footprint.exact && a.footprint.exact,
        };
        merged.alpha = merged.alpha.max(a.alpha);
        merged.max_ways = merged.max_ways.max(a.max_ways);
    }
    Ok(merged)
}
