//! Priority policies: construction from equilibrium points, breakpoint-based
//! selection, Whittle indices and the abandonment index.

pub mod abandonment;
pub mod membership;
pub mod pi_star;
pub mod select;
pub mod whittle;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelInstance, StateId};

pub use abandonment::{abandonment_index, iota_policy};
pub use membership::{optimal_face, pi_star_membership, MembershipReport, MembershipSource};
pub use pi_star::{is_in_pi_star, linear_extensions, pi_star_constraints, PolicyConstraints};
pub use select::select_policy;
pub use whittle::{
    whittle_index, whittle_index_report, whittle_limit, whittle_limit_with, whittle_policy,
    IndexCriterion, IndexValue, IndexabilityWitness, WhittleEntry, WhittleIndexTable,
    WhittleOptions, DEFAULT_BETAS,
};

/// Activate greedily down `order`; states in `never_active` are never activated.
/// Ties inside the order do not exist: callers that build orders from indices break
/// ties lexicographically by `(k, j)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityPolicy {
    /// Highest priority first.
    pub order: Vec<StateId>,
    pub never_active: Vec<StateId>,
}

impl PriorityPolicy {
    /// A policy over `model`; order and never-active set must be disjoint and cover every state.
    pub fn new(
        model: &ModelInstance,
        order: Vec<StateId>,
        mut never_active: Vec<StateId>,
    ) -> Result<Self> {
        never_active.sort();
        let p = Self {
            order,
            never_active,
        };
        p.check_covers(model)?;
        Ok(p)
    }

    /// Check disjointness and coverage against `model`.
    pub fn check_covers(&self, model: &ModelInstance) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in self.order.iter().chain(&self.never_active) {
            if !model.contains(*s) {
                return Err(Error::InvalidInput(format!(
                    "policy mentions unknown state {s}"
                )));
            }
            if !seen.insert(*s) {
                return Err(Error::InvalidInput(format!("policy lists state {s} twice")));
            }
        }
        if seen.len() != model.num_flat_states() {
            return Err(Error::InvalidInput(
                "policy does not cover every state".into(),
            ));
        }
        Ok(())
    }

    /// Single-class shorthand such as `prio21`: the digits give the order of class-1
    /// states, every other state of the model is never active.
    pub fn from_name(model: &ModelInstance, name: &str) -> Result<Self> {
        let digits = name
            .strip_prefix("prio")
            .ok_or_else(|| Error::InvalidInput(format!("unknown policy name {name:?}")))?;
        if model.num_classes() != 1 || digits.is_empty() {
            return Err(Error::InvalidInput(format!(
                "policy name {name:?} needs a single-class model and at least one state"
            )));
        }
        let order = digits
            .chars()
            .map(|ch| {
                ch.to_digit(10)
                    .filter(|d| *d >= 1)
                    .map(|d| StateId::new(0, d as usize - 1))
                    .ok_or_else(|| {
                        Error::InvalidInput(format!("bad state digit {ch:?} in {name:?}"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let never = model
            .state_ids()
            .into_iter()
            .filter(|s| !order.contains(s))
            .collect();
        Self::new(model, order, never)
    }

    /// The `prio…` name of a single-class policy with at most nine states.
    pub fn name(&self) -> Option<String> {
        if self.order.iter().any(|s| s.class != 0 || s.state >= 9) {
            return None;
        }
        let digits: String = self
            .order
            .iter()
            .map(|s| char::from(b'1' + s.state as u8))
            .collect();
        Some(format!("prio{digits}"))
    }

    /// Priority order as flat state indices of `model`.
    pub fn flat_order(&self, model: &ModelInstance) -> Vec<usize> {
        self.order.iter().map(|s| model.flat_index(*s)).collect()
    }
}

/// Water-filling split of fluid mass: walk `order` (flat indices) and give each state
/// `min(remaining budget, mass)`; states off the order stay passive. Returns `x¹`.
pub fn allocate_fluid(order: &[usize], x: &[f64], budget: f64) -> Vec<f64> {
    let mut active = vec![0.0; x.len()];
    let mut left = budget.max(0.0);
    for &f in order {
        if left <= 0.0 {
            break;
        }
        let a = x[f].max(0.0).min(left);
        active[f] = a;
        left -= a;
    }
    active
}

/// Integer analogue of [`allocate_fluid`] on bandit counts.
pub fn allocate_counts(order: &[usize], n: &[u32], budget: u32) -> Vec<u32> {
    let mut active = vec![0; n.len()];
    let mut left = budget;
    for &f in order {
        if left == 0 {
            break;
        }
        let a = n[f].min(left);
        active[f] = a;
        left -= a;
    }
    active
}

/// Built-in policy names: every `prio…` shorthand and `iota` (the abandonment index).
pub fn builtin_policy(model: &ModelInstance, name: &str) -> Result<PriorityPolicy> {
    if name == "iota" {
        iota_policy(model)
    } else {
        PriorityPolicy::from_name(model, name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn names_round_trip() {
        let m = scenarios::nonindexable_3state();
        let p = PriorityPolicy::from_name(&m, "prio21").unwrap();
        assert_eq!(p.order, vec![StateId::new(0, 1), StateId::new(0, 0)]);
        assert_eq!(p.never_active, vec![StateId::new(0, 2)]);
        assert_eq!(p.name().as_deref(), Some("prio21"));
        assert!(PriorityPolicy::from_name(&m, "prio11").is_err());
        assert!(PriorityPolicy::from_name(&m, "prio4").is_err());
        assert!(PriorityPolicy::from_name(&m, "fifo").is_err());
    }

    #[test]
    fn coverage_is_checked() {
        let m = scenarios::nonindexable_3state();
        assert!(PriorityPolicy::new(&m, vec![StateId::new(0, 0)], vec![]).is_err());
        assert!(
            PriorityPolicy::new(&m, vec![StateId::new(0, 0)], vec![StateId::new(0, 0)]).is_err()
        );
    }

    #[test]
    fn water_filling() {
        let x1 = allocate_fluid(&[0, 1], &[0.4, 0.9], 1.0);
        assert!((x1[0] - 0.4).abs() < 1e-15 && (x1[1] - 0.6).abs() < 1e-15);
        assert_eq!(allocate_fluid(&[0, 1], &[0.4, 0.9], 5.0), vec![0.4, 0.9]);
        assert_eq!(allocate_fluid(&[1], &[5.0, 1.0], 10.0), vec![0.0, 1.0]);
        assert_eq!(allocate_counts(&[1, 0], &[3, 2], 4), vec![2, 2]);
    }

    #[test]
    fn json_round_trip() {
        let m = scenarios::nonindexable_3state();
        let p = PriorityPolicy::from_name(&m, "prio12").unwrap();
        let text = serde_json::to_string(&p).unwrap();
        assert_eq!(text, r#"{"order":["1.1","1.2"],"never_active":["1.3"]}"#);
        let back: PriorityPolicy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, p);
    }
}
