//! Exact average-cost solving of small fixed populations on occupancy vectors.
//!
//! States are the count vectors `n_{j,k}` with `Σ_j n_{j,k} = X_k(0)` reachable from
//! the initial occupancy; actions are activation vectors `0 ≤ m ≤ n` with
//! `Σ m ≤ ⌊α⌋`. The chain is uniformized at
//! `Λ = q̄·Σ_k X_k(0)` inflated by a constant factor so every state keeps a self-loop,
//! which makes relative value iteration converge (the chain is aperiodic).

use std::collections::HashMap;

use serde::Serialize;

use super::single::SolveResult;
use crate::error::{Error, Result};
use crate::model::{uniformization_rate, Action, ModelInstance, Population};
use crate::par::{self, Execution};
use crate::policy::{allocate_counts, PriorityPolicy};

/// Uniformization inflation; every state keeps self-loop probability ≥ 1 − 1/1.1.
pub const APERIODICITY_FACTOR: f64 = 1.1;
/// States per Bellman sweep above which a parallel sweep pays off.
const PARALLEL_MIN_STATES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RviOptions {
    /// Stop when the gain bounds are within this span.
    pub tol: f64,
    pub max_iter: usize,
    /// Cap on the number of state-action pairs.
    pub max_pairs: usize,
    pub execution: Execution,
}

impl Default for RviOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 1_000_000,
            max_pairs: 2_000_000,
            execution: Execution::default(),
        }
    }
}

/// How actions are generated at each state.
#[derive(Debug, Clone, Copy)]
pub enum ActionSet<'a> {
    /// Every activation vector within the budget, or, above the pair cap, only the ones
    /// using the full budget `min(⌊α⌋, Σn)`.
    Optimize,
    /// Only the greedy allocation of `policy`.
    Evaluate(&'a PriorityPolicy),
}

/// The uniformized count chain with its state-action pairs flattened.
#[derive(Debug, Clone)]
pub struct PopulationMdp {
    pub states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    pub budget: u32,
    /// Uniformization rate; discrete costs are rates divided by it.
    pub rate: f64,
    /// Whether the action set was restricted to full-budget allocations.
    pub restricted: bool,
    pair_start: Vec<usize>,
    allocations: Vec<Vec<u32>>,
    cost: Vec<f64>,
    self_prob: Vec<f64>,
    trans_start: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

fn allocations(n: &[u32], budget: u32, exact: Option<u32>) -> Vec<Vec<u32>> {
    fn rec(n: &[u32], f: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if f == n.len() {
            out.push(cur.clone());
            return;
        }
        for m in 0..=n[f].min(left) {
            cur.push(m);
            rec(n, f + 1, left - m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, 0, budget, &mut Vec::with_capacity(n.len()), &mut out);
    if let Some(total) = exact {
        out.retain(|m| m.iter().sum::<u32>() == total);
    }
    out.sort_by_key(|m| m.iter().sum::<u32>());
    out
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Number of occupancy vectors `Π_k C(X_k + J_k − 1, J_k − 1)` with the model's class totals.
pub fn state_count(model: &ModelInstance) -> Option<u64> {
    let masses = model.class_masses()?;
    Some(
        model
            .classes
            .iter()
            .zip(masses)
            .map(|(c, x)| {
                binomial(
                    x.round() as u64 + c.num_states() as u64 - 1,
                    c.num_states() as u64 - 1,
                )
            })
            .product(),
    )
}

impl PopulationMdp {
    /// Build the chain on the occupancy vectors reachable from the model's initial counts.
    /// When the generators connect all states this is every vector with the given class
    /// totals; when they do not (e.g. static bandits), restricting to the reachable set keeps
    /// the average cost of the initial occupancy well defined.
    pub fn build(model: &ModelInstance, actions: ActionSet<'_>, max_pairs: usize) -> Result<Self> {
        let Population::Fixed { counts } = &model.population else {
            return Err(Error::InvalidInput(
                "exact solving needs a fixed population".into(),
            ));
        };
        if model
            .classes
            .iter()
            .any(|c| c.arrival_rate != 0.0 || c.admits_departure())
        {
            return Err(Error::InvalidInput(
                "a fixed population must not have arrivals or departures".into(),
            ));
        }
        let start: Vec<u32> = counts
            .iter()
            .flatten()
            .map(|&x| {
                if x < 0.0 || (x - x.round()).abs() > 1e-9 {
                    Err(Error::InvalidInput(format!(
                        "initial count {x} is not a nonnegative integer"
                    )))
                } else {
                    Ok(x.round() as u32)
                }
            })
            .collect::<Result<_>>()?;
        let order = match actions {
            ActionSet::Evaluate(policy) => {
                policy.check_covers(model)?;
                Some(policy.flat_order(model))
            }
            ActionSet::Optimize => None,
        };
        match Self::explore(model, &start, order.as_deref(), false, max_pairs) {
            Err(Error::StateSpaceTooLarge { .. }) if order.is_none() => {
                Self::explore(model, &start, None, true, max_pairs)
            }
            other => other,
        }
    }

    fn explore(
        model: &ModelInstance,
        start: &[u32],
        order: Option<&[usize]>,
        restricted: bool,
        max_pairs: usize,
    ) -> Result<Self> {
        let budget = model.alpha.max(0.0).floor() as u32;
        let offsets = model.class_offsets();
        let flat_class: Vec<(usize, usize)> = (0..model.num_classes())
            .flat_map(|k| (0..model.classes[k].num_states()).map(move |j| (k, j)))
            .collect();
        let total: u32 = start.iter().sum();
        let base = uniformization_rate(model) * total as f64;
        let rate = if base > 0.0 {
            base * APERIODICITY_FACTOR
        } else {
            1.0
        };

        let mut mdp = Self {
            states: vec![start.to_vec()],
            index: HashMap::from([(start.to_vec(), 0)]),
            budget,
            rate,
            restricted,
            pair_start: Vec::new(),
            allocations: Vec::new(),
            cost: Vec::new(),
            self_prob: Vec::new(),
            trans_start: vec![0],
            targets: Vec::new(),
            probs: Vec::new(),
        };
        let mut s = 0;
        while s < mdp.states.len() {
            let n = mdp.states[s].clone();
            let list = match order {
                Some(o) => vec![allocate_counts(o, &n, budget)],
                None => allocations(&n, budget, restricted.then(|| budget.min(n.iter().sum()))),
            };
            if mdp.allocations.len() + list.len() > max_pairs {
                return Err(Error::StateSpaceTooLarge {
                    pairs: mdp.allocations.len() + list.len(),
                    cap: max_pairs,
                });
            }
            mdp.pair_start.push(mdp.allocations.len());
            for m in list {
                let mut cost = 0.0;
                let mut out = 0.0;
                for (f, &(k, i)) in flat_class.iter().enumerate() {
                    if n[f] == 0 {
                        continue;
                    }
                    let c = &model.classes[k];
                    let passive = (n[f] - m[f]) as f64;
                    let active = m[f] as f64;
                    cost +=
                        passive * c.cost(i, Action::Passive) + active * c.cost(i, Action::Active);
                    for j in 0..c.num_states() {
                        if j == i {
                            continue;
                        }
                        let r = passive * c.generator(Action::Passive)[i][j + 1]
                            + active * c.generator(Action::Active)[i][j + 1];
                        if r > 0.0 {
                            let mut t = n.clone();
                            t[f] -= 1;
                            t[offsets[k] + j] += 1;
                            let next = mdp.states.len();
                            let target = *mdp.index.entry(t.clone()).or_insert(next);
                            if target == next {
                                mdp.states.push(t);
                            }
                            mdp.targets.push(target as u32);
                            mdp.probs.push(r / rate);
                            out += r / rate;
                        }
                    }
                }
                mdp.cost.push(cost / rate);
                mdp.self_prob.push(1.0 - out);
                mdp.trans_start.push(mdp.targets.len());
                mdp.allocations.push(m);
            }
            s += 1;
        }
        mdp.pair_start.push(mdp.allocations.len());
        Ok(mdp)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.allocations.len()
    }

    pub fn state_index(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    /// Best action value at `s` and the position of the first minimizing pair.
    fn backup(&self, h: &[f64], s: usize) -> (f64, usize) {
        let value = |p: usize| {
            let mut v = self.cost[p] + self.self_prob[p] * h[s];
            for t in self.trans_start[p]..self.trans_start[p + 1] {
                v += self.probs[t] * h[self.targets[t] as usize];
            }
            v
        };
        let mut arg = self.pair_start[s];
        let mut best = value(arg);
        for p in self.pair_start[s] + 1..self.pair_start[s + 1] {
            let v = value(p);
            if v < best - 1e-12 * (1.0 + best.abs()) {
                best = v;
                arg = p;
            }
        }
        (best, arg)
    }

    /// Relative value iteration; the gain is reported per unit of continuous time.
    pub fn solve(&self, opts: &RviOptions) -> Result<SolveResult<Vec<u32>>> {
        let n = self.num_states();
        let parallel = if n >= PARALLEL_MIN_STATES {
            opts.execution
        } else {
            Execution::Sequential
        };
        let mut h = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut span = f64::INFINITY;
        for it in 1..=opts.max_iter {
            par::fill(&mut w, parallel, |s| self.backup(&h, s).0);
            let (lo, hi) = w
                .iter()
                .zip(&h)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                    (lo.min(a - b), hi.max(a - b))
                });
            span = self.rate * (hi - lo);
            let anchor = w[0];
            for (hv, wv) in h.iter_mut().zip(&w) {
                *hv = wv - anchor;
            }
            if span <= opts.tol {
                let actions = (0..n)
                    .map(|s| self.allocations[self.backup(&h, s).1].clone())
                    .collect();
                return Ok(SolveResult {
                    values: h.iter().map(|v| v * self.rate).collect(),
                    gain: Some(self.rate * 0.5 * (lo + hi)),
                    actions,
                    iterations: it,
                    residual: span,
                });
            }
        }
        Err(Error::NoConvergence {
            iterations: opts.max_iter,
            span,
        })
    }
}

/// Optimal average cost (policy `None`) or the average cost of a priority policy, which
/// activates the `⌊α⌋` highest-priority bandits present.
pub fn relative_value_iteration(
    model: &ModelInstance,
    policy: Option<&PriorityPolicy>,
    opts: &RviOptions,
) -> Result<SolveResult<Vec<u32>>> {
    let set = match policy {
        Some(p) => ActionSet::Evaluate(p),
        None => ActionSet::Optimize,
    };
    PopulationMdp::build(model, set, opts.max_pairs)?.solve(opts)
}

/// Copy of `model` with `x0` bandits of every class, all in state `start_state` (zero-based).
pub fn fixed_instance(model: &ModelInstance, x0: u32, start_state: usize) -> Result<ModelInstance> {
    let counts = model
        .classes
        .iter()
        .map(|c| {
            if start_state >= c.num_states() {
                return Err(Error::InvalidInput(format!(
                    "start state {} out of range",
                    start_state + 1
                )));
            }
            let mut row = vec![0.0; c.num_states()];
            row[start_state] = x0 as f64;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(ModelInstance {
        population: Population::Fixed { counts },
        ..model.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub x0: u32,
    pub policy: String,
    pub g_policy: f64,
    pub g_opt: f64,
    /// `100·(g^π − g*)/|g*|`, or the absolute gap when `g* = 0`.
    pub gap_percent: f64,
    pub absolute: bool,
}

impl GapRow {
    pub fn csv_header() -> &'static str {
        "X0,policy,g_policy,g_opt,gap_percent"
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.x0,
            self.policy,
            crate::fmt_num(self.g_policy),
            crate::fmt_num(self.g_opt),
            crate::fmt_num(self.gap_percent)
        )
    }
}

/// Relative sub-optimality gaps of `policies` for every population size in `x0s`, all bandits
/// starting in `start_state`. Population sizes are solved concurrently.
pub fn suboptimality_table(
    model: &ModelInstance,
    policies: &[(String, PriorityPolicy)],
    x0s: &[u32],
    start_state: usize,
    opts: &RviOptions,
) -> Result<Vec<GapRow>> {
    let inner = RviOptions {
        execution: Execution::Sequential,
        ..*opts
    };
    let rows = par::map_indexed(x0s, opts.execution, |_, &x0| -> Result<Vec<GapRow>> {
        let m = fixed_instance(model, x0, start_state)?;
        let g_opt = relative_value_iteration(&m, None, &inner)?
            .gain
            .unwrap_or(0.0);
        policies
            .iter()
            .map(|(name, p)| {
                let g = relative_value_iteration(&m, Some(p), &inner)?
                    .gain
                    .unwrap_or(0.0);
                let absolute = g_opt == 0.0;
                let gap = if absolute {
                    g - g_opt
                } else {
                    100.0 * (g - g_opt) / g_opt.abs()
                };
                Ok(GapRow {
                    x0,
                    policy: name.clone(),
                    g_policy: g,
                    g_opt,
                    gap_percent: gap,
                    absolute,
                })
            })
            .collect()
    });
    Ok(rows
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BanditClass;
    use crate::scenarios;

    fn names(m: &ModelInstance, list: &[&str]) -> Vec<(String, PriorityPolicy)> {
        list.iter()
            .map(|n| (n.to_string(), PriorityPolicy::from_name(m, n).unwrap()))
            .collect()
    }

    #[test]
    fn state_count_formula() {
        let m = fixed_instance(&scenarios::nonindexable_3state(), 10, 0).unwrap();
        let mdp = PopulationMdp::build(&m, ActionSet::Optimize, 2_000_000).unwrap();
        assert_eq!(mdp.num_states(), 66);
        assert_eq!(state_count(&m), Some(66));
        for (i, s) in mdp.states.iter().enumerate() {
            assert_eq!(mdp.state_index(s), Some(i));
        }
    }

    #[test]
    fn static_population_cost() {
        let m = ModelInstance {
            alpha: 1.0,
            population: Population::Fixed {
                counts: vec![vec![0.0, 4.0]],
            },
            classes: vec![BanditClass {
                arrival_rate: 0.0,
                entry_dist: vec![1.0, 0.0],
                gen_passive: vec![vec![0.0; 3]; 2],
                gen_active: vec![vec![0.0; 3]; 2],
                cost_passive: vec![0.0, 1.5],
                cost_active: vec![0.0, 1.5],
            }],
        };
        let p = PriorityPolicy::new(&m, vec![], m.state_ids()).unwrap();
        let r = relative_value_iteration(&m, Some(&p), &RviOptions::default()).unwrap();
        assert!((r.gain.unwrap() - 6.0).abs() <= 1e-12);
    }

    #[test]
    fn optimum_dominates_and_evaluation_is_consistent() {
        let m = fixed_instance(&scenarios::nonindexable_3state(), 2, 0).unwrap();
        let opts = RviOptions::default();
        let opt = relative_value_iteration(&m, None, &opts).unwrap();
        let g = opt.gain.unwrap();
        assert!((g - -1.47879).abs() <= 1e-4, "{g}");
        for (_, p) in names(
            &m,
            &["prio1", "prio12", "prio123", "prio2", "prio21", "prio213"],
        ) {
            let gp = relative_value_iteration(&m, Some(&p), &opts)
                .unwrap()
                .gain
                .unwrap();
            assert!(gp >= g - 1e-7);
        }
    }

    #[test]
    fn selected_policy_has_the_smallest_gap_at_two() {
        let m = scenarios::nonindexable_3state();
        let list = names(
            &m,
            &["prio1", "prio12", "prio123", "prio2", "prio21", "prio213"],
        );
        let rows = suboptimality_table(&m, &list, &[2], 0, &RviOptions::default()).unwrap();
        let best = rows
            .iter()
            .min_by(|a, b| a.gap_percent.total_cmp(&b.gap_percent))
            .unwrap();
        assert_eq!(best.policy, "prio1");
        assert!(rows.iter().all(|r| r.gap_percent >= -1e-7));
    }

    #[test]
    fn restricted_action_set_above_the_cap() {
        let m = fixed_instance(&scenarios::nonindexable_3state().with_alpha(2.0), 3, 0).unwrap();
        let full = PopulationMdp::build(&m, ActionSet::Optimize, 2_000_000).unwrap();
        let cap = full.num_pairs() - 1;
        let restricted = PopulationMdp::build(&m, ActionSet::Optimize, cap).unwrap();
        assert!(restricted.restricted && restricted.num_pairs() < full.num_pairs());
        assert!(matches!(
            PopulationMdp::build(&m, ActionSet::Optimize, 3),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }

    #[test]
    fn dynamic_population_is_rejected() {
        assert!(
            relative_value_iteration(&scenarios::mmsm_2class(), None, &RviOptions::default())
                .is_err()
        );
    }

    #[test]
    fn execution_modes_agree() {
        let m = fixed_instance(&scenarios::nonindexable_3state(), 4, 0).unwrap();
        let seq = RviOptions {
            execution: Execution::Sequential,
            ..Default::default()
        };
        let par = RviOptions {
            execution: Execution::Parallel,
            ..Default::default()
        };
        let a = relative_value_iteration(&m, None, &seq).unwrap();
        let b = relative_value_iteration(&m, None, &par).unwrap();
        assert_eq!(a.gain, b.gain);
    }
}
