//! The index `ι` for single-state classes of a multi-server queue with abandonments.

use super::PriorityPolicy;
use crate::error::{Error, Result};
use crate::model::{Action, ModelInstance, StateId};

/// Indices at or below this are treated as non-positive.
pub const POSITIVE_INDEX_TOL: f64 = 1e-9;

/// `ι_k = q_k(0|1,1)·C_k(1,0)/q_k(0|1,0) − C_k(1,1)` for every class.
///
/// This equals `q(0|1,1)·(C(1,0)/q(0|1,0) − C(1,1)/q(0|1,1))` and stays defined when
/// the active departure rate is zero.
pub fn abandonment_index(model: &ModelInstance) -> Result<Vec<f64>> {
    model
        .classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if c.num_states() != 1 {
                return Err(Error::InvalidInput(format!(
                    "class {} has {} states; the abandonment index needs exactly one",
                    k + 1,
                    c.num_states()
                )));
            }
            let theta = c.departure_rate(Action::Passive, 0);
            if !(theta > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "class {} has no abandonment while waiting",
                    k + 1
                )));
            }
            let served = c.departure_rate(Action::Active, 0);
            Ok(served * c.cost(0, Action::Passive) / theta - c.cost(0, Action::Active))
        })
        .collect()
}

/// Serve classes in decreasing `ι`, ties by class index; classes with `ι ≤ 0` are never served.
pub fn iota_policy(model: &ModelInstance) -> Result<PriorityPolicy> {
    let iota = abandonment_index(model)?;
    let mut ranked: Vec<usize> = (0..iota.len())
        .filter(|&k| iota[k] > POSITIVE_INDEX_TOL)
        .collect();
    ranked.sort_by(|&a, &b| iota[b].total_cmp(&iota[a]).then(a.cmp(&b)));
    let never = (0..iota.len())
        .filter(|&k| iota[k] <= POSITIVE_INDEX_TOL)
        .map(|k| StateId::new(k, 0))
        .collect();
    PriorityPolicy::new(
        model,
        ranked.into_iter().map(|k| StateId::new(k, 0)).collect(),
        never,
    )
}
