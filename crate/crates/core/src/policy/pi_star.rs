//! The set of priority policies induced by an optimal equilibrium point.
//!
//! With `x*` optimal for budget `α`:
//! 1. states with `x*¹ > 0, x*⁰ = 0` outrank every state with `x*⁰ > 0`;
//! 2. a state with both actions outranks every state with `x*⁰ > 0, x*¹ = 0`;
//! 3. if the budget is slack, states with `x*¹ = 0, x*⁰ > 0` are never activated.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::PriorityPolicy;
use crate::lp::{EquilibriumPoint, StateClass};
use crate::model::StateId;

const SLACK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyConstraints {
    /// `(a, b)`: `a` must have higher priority than `b` (unless `b` is never active).
    pub must_dominate: Vec<(StateId, StateId)>,
    pub forced_never_active: Vec<StateId>,
    /// States with `x*¹ > 0`; they may not be excluded from activation.
    pub must_activate: Vec<StateId>,
    /// All states of the source equilibrium, in flat order.
    pub states: Vec<StateId>,
    pub alpha: f64,
}

pub fn pi_star_constraints(eq: &EquilibriumPoint, alpha: f64) -> PolicyConstraints {
    let n = eq.states.len();
    let classes: Vec<StateClass> = (0..n).map(|f| eq.classify(f)).collect();
    let has_passive = |c: StateClass| matches!(c, StateClass::Split | StateClass::PassiveOnly);
    let mut must_dominate = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let rule1 = classes[a] == StateClass::ActiveOnly && has_passive(classes[b]);
            let rule2 = classes[a] == StateClass::Split && classes[b] == StateClass::PassiveOnly;
            if rule1 || rule2 {
                must_dominate.push((eq.states[a], eq.states[b]));
            }
        }
    }
    let slack = eq.active_total() < alpha - SLACK_TOL;
    let forced_never_active = if slack {
        (0..n)
            .filter(|&f| classes[f] == StateClass::PassiveOnly)
            .map(|f| eq.states[f])
            .collect()
    } else {
        Vec::new()
    };
    let must_activate = (0..n)
        .filter(|&f| matches!(classes[f], StateClass::ActiveOnly | StateClass::Split))
        .map(|f| eq.states[f])
        .collect();
    PolicyConstraints {
        must_dominate,
        forced_never_active,
        must_activate,
        states: eq.states.clone(),
        alpha,
    }
}

impl PolicyConstraints {
    /// Whether `policy` is one of the policies these constraints describe.
    pub fn admits(&self, policy: &PriorityPolicy) -> bool {
        let never: BTreeSet<StateId> = policy.never_active.iter().copied().collect();
        let pos: BTreeMap<StateId, usize> = policy
            .order
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i))
            .collect();
        let covered = self
            .states
            .iter()
            .all(|s| pos.contains_key(s) != never.contains(s))
            && pos.len() + never.len() == self.states.len();
        if !covered {
            return false;
        }
        if !self.forced_never_active.iter().all(|s| never.contains(s)) {
            return false;
        }
        if self.must_activate.iter().any(|s| never.contains(s)) {
            return false;
        }
        self.must_dominate.iter().all(|(a, b)| match pos.get(b) {
            None => true,
            Some(pb) => pos.get(a).is_some_and(|pa| pa < pb),
        })
    }
}

/// Whether `policy` belongs to the set induced by `eq` at budget `alpha`.
pub fn is_in_pi_star(policy: &PriorityPolicy, eq: &EquilibriumPoint, alpha: f64) -> bool {
    pi_star_constraints(eq, alpha).admits(policy)
}

/// Every order of the states outside `forced_never_active` that respects `must_dominate`,
/// in lexicographic order, up to `limit` policies.
pub fn linear_extensions(constraints: &PolicyConstraints, limit: usize) -> Vec<PriorityPolicy> {
    let never: BTreeSet<StateId> = constraints.forced_never_active.iter().copied().collect();
    let free: Vec<StateId> = constraints
        .states
        .iter()
        .copied()
        .filter(|s| !never.contains(s))
        .collect();
    let edges: Vec<(StateId, StateId)> = constraints
        .must_dominate
        .iter()
        .copied()
        .filter(|(a, b)| !never.contains(a) && !never.contains(b))
        .collect();
    let mut out = Vec::new();
    let mut order = Vec::with_capacity(free.len());
    let mut used = vec![false; free.len()];
    extend(
        &free, &edges, &mut order, &mut used, &never, limit, &mut out,
    );
    out
}

fn extend(
    free: &[StateId],
    edges: &[(StateId, StateId)],
    order: &mut Vec<StateId>,
    used: &mut [bool],
    never: &BTreeSet<StateId>,
    limit: usize,
    out: &mut Vec<PriorityPolicy>,
) {
    if out.len() >= limit {
        return;
    }
    if order.len() == free.len() {
        out.push(PriorityPolicy {
            order: order.clone(),
            never_active: never.iter().copied().collect(),
        });
        return;
    }
    for i in 0..free.len() {
        if used[i] {
            continue;
        }
        let s = free[i];
        let blocked = edges
            .iter()
            .any(|(a, b)| *b == s && free.iter().position(|x| x == a).is_some_and(|ia| !used[ia]));
        if blocked {
            continue;
        }
        used[i] = true;
        order.push(s);
        extend(free, edges, order, used, never, limit, out);
        order.pop();
        used[i] = false;
    }
}
