//! Selecting one priority policy per breakpoint interval.
//!
//! On the interval containing the parameter, active-only states come first
//! (lexicographically), then the split state. If the budget binds, a passive-only
//! state is appended below them when it is activated on some interval with more
//! spare capacity (larger `α`, or smaller population); otherwise it is never activated.
//! Zero-mass states are never activated.

use super::PriorityPolicy;
use crate::error::{Error, Result};
use crate::lp::BreakpointTable;
use crate::model::StateId;

pub fn select_policy(table: &BreakpointTable, value: f64) -> Result<PriorityPolicy> {
    let i = table.interval_index(value).ok_or(Error::OutOfRange {
        value,
        max: table.sweep_max,
    })?;
    let iv = &table.intervals[i];
    let mut order: Vec<StateId> = iv.activated().collect();
    let mut never: Vec<StateId> = iv.empty.clone();

    let roomier: Vec<usize> = if table.axis.capacity_grows_with_parameter() {
        (i + 1..table.intervals.len()).collect()
    } else {
        (0..i).rev().collect()
    };
    let mut appended: Vec<(usize, StateId)> = Vec::new();
    for &s in &iv.low {
        let reach = roomier
            .iter()
            .position(|&n| table.intervals[n].activated().any(|t| t == s));
        match reach {
            Some(distance) if iv.binding => appended.push((distance, s)),
            _ => never.push(s),
        }
    }
    appended.sort();
    order.extend(appended.into_iter().map(|(_, s)| s));
    never.sort();
    Ok(PriorityPolicy {
        order,
        never_active: never,
    })
}
