//! Whittle indices by bisection on the activation charge `ν`, with an
//! indexability check on the passive sets `D(ν)`.
//!
//! For a fixed `ν` the single-bandit discounted subproblem is solved exactly
//! (value iteration warm start, then policy iteration). The index of state `j`
//! is the least `ν` at which passive is optimal in `j`; ties count as passive.

use serde::{Serialize, Serializer};

use super::abandonment::POSITIVE_INDEX_TOL;
use super::PriorityPolicy;
use crate::error::{Error, Result};
use crate::mdp::single::{build_single_bandit, solve_discounted_exact};
use crate::model::{uniformization_rate, Action, ModelInstance, StateId};
use crate::par::{self, Execution};

/// Default decreasing discount-rate sequence for limiting indices.
pub const DEFAULT_BETAS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
/// Relative agreement of the last two discount rates required to flag a limit as converged.
pub const LIMIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexValue {
    Finite(f64),
    PlusInfinity,
    MinusInfinity,
}

impl IndexValue {
    pub fn as_f64(self) -> f64 {
        match self {
            IndexValue::Finite(v) => v,
            IndexValue::PlusInfinity => f64::INFINITY,
            IndexValue::MinusInfinity => f64::NEG_INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            IndexValue::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl Serialize for IndexValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            IndexValue::Finite(v) => serializer.serialize_f64(*v),
            IndexValue::PlusInfinity => serializer.serialize_str("+inf"),
            IndexValue::MinusInfinity => serializer.serialize_str("-inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IndexCriterion {
    Discounted { beta: f64 },
    Limit { betas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhittleEntry {
    pub state: StateId,
    pub value: IndexValue,
    /// Always true for discounted indices; for limits, whether the last two rates agree.
    pub converged: bool,
}

/// Two charges `nu_low < nu_high` whose passive sets are not nested.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexabilityWitness {
    pub nu_low: f64,
    pub nu_high: f64,
    pub passive_low: Vec<StateId>,
    pub passive_high: Vec<StateId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhittleIndexTable {
    pub class: usize,
    pub criterion: IndexCriterion,
    pub entries: Vec<WhittleEntry>,
    /// When false the entries are unreliable and no index policy is built from them.
    pub indexable: bool,
    pub witness: Option<IndexabilityWitness>,
    /// Index of the static zero-cost dummy bandit.
    pub dummy_index: f64,
}

impl WhittleIndexTable {
    fn not_indexable_error(&self) -> Error {
        let w = self.witness.clone().unwrap_or(IndexabilityWitness {
            nu_low: f64::NAN,
            nu_high: f64::NAN,
            passive_low: Vec::new(),
            passive_high: Vec::new(),
        });
        Error::NotIndexable {
            class: self.class + 1,
            nu_low: w.nu_low,
            nu_high: w.nu_high,
            passive_low: w.passive_low,
            passive_high: w.passive_high,
        }
    }

    /// CSV rows `k,j,beta,nu` (`beta` empty for limits).
    pub fn csv_rows(&self) -> Vec<String> {
        let beta = match &self.criterion {
            IndexCriterion::Discounted { beta } => crate::fmt_num(*beta),
            IndexCriterion::Limit { betas } => {
                betas.last().map(|b| crate::fmt_num(*b)).unwrap_or_default()
            }
        };
        self.entries
            .iter()
            .map(|e| {
                let nu = match e.value {
                    IndexValue::Finite(v) => crate::fmt_num(v),
                    IndexValue::PlusInfinity => "inf".into(),
                    IndexValue::MinusInfinity => "-inf".into(),
                };
                format!(
                    "{},{},{},{}",
                    e.state.class + 1,
                    e.state.state + 1,
                    beta,
                    nu
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WhittleOptions {
    /// Bisection tolerance on `ν`.
    pub tolerance: f64,
    /// Uniform grid points for the indexability sweep.
    pub grid_points: usize,
    /// Times the bracket may double before an index is flagged infinite.
    pub max_doublings: u32,
    pub execution: Execution,
}

impl Default for WhittleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            grid_points: 200,
            max_doublings: 6,
            execution: Execution::default(),
        }
    }
}

struct Subproblem<'a> {
    model: &'a ModelInstance,
    class: usize,
    beta: f64,
}

impl Subproblem<'_> {
    /// `D(ν)` as a per-state flag.
    fn passive(&self, nu: f64) -> Result<Vec<bool>> {
        let mdp = build_single_bandit(self.model, self.class, self.beta, nu)?;
        let sol = solve_discounted_exact(&mdp)?;
        Ok(sol.actions[1..]
            .iter()
            .map(|a| *a == Action::Passive)
            .collect())
    }

    fn index(&self, j: usize, bound: f64, opts: &WhittleOptions) -> Result<IndexValue> {
        let mut lo = -bound;
        let mut hi = bound;
        let mut doublings = 0;
        while self.passive(lo)?[j] {
            if doublings == opts.max_doublings {
                return Ok(IndexValue::MinusInfinity);
            }
            lo *= 2.0;
            doublings += 1;
        }
        doublings = 0;
        while !self.passive(hi)?[j] {
            if doublings == opts.max_doublings {
                return Ok(IndexValue::PlusInfinity);
            }
            hi *= 2.0;
            doublings += 1;
        }
        while hi - lo > opts.tolerance {
            let mid = 0.5 * (lo + hi);
            if self.passive(mid)?[j] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(IndexValue::Finite(hi))
    }
}

/// Initial bisection half-width `10·max|C| + q̄` (with `q̄ = 0` replaced by 1).
pub fn default_bound(model: &ModelInstance, class: usize) -> f64 {
    let c = &model.classes[class];
    let max_cost = c
        .cost_passive
        .iter()
        .chain(&c.cost_active)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let q_bar = uniformization_rate(model);
    10.0 * max_cost + if q_bar > 0.0 { q_bar } else { 1.0 }
}

/// Discounted indices of `class` together with the indexability verdict; never fails on
/// nonindexable classes (see [`whittle_index`] for the strict variant).
pub fn whittle_index_report(
    model: &ModelInstance,
    class: usize,
    beta: f64,
    opts: &WhittleOptions,
) -> Result<WhittleIndexTable> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "discount rate must be positive, got {beta}"
        )));
    }
    if class >= model.num_classes() {
        return Err(Error::InvalidInput(format!("no class {}", class + 1)));
    }
    let sub = Subproblem { model, class, beta };
    let bound = default_bound(model, class);
    let num_states = model.classes[class].num_states();
    let values = par::map_range(num_states, opts.execution, |j| sub.index(j, bound, opts))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut grid: Vec<f64> = (0..opts.grid_points)
        .map(|i| -bound + 2.0 * bound * i as f64 / (opts.grid_points.max(2) - 1) as f64)
        .collect();
    for v in values.iter().filter_map(|v| v.finite()) {
        grid.push(v - 10.0 * opts.tolerance);
        grid.push(v + 10.0 * opts.tolerance);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let sets = par::map_indexed(&grid, opts.execution, |_, &nu| sub.passive(nu))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let ids = |set: &[bool]| -> Vec<StateId> {
        (0..set.len())
            .filter(|&j| set[j])
            .map(|j| StateId::new(class, j))
            .collect()
    };
    let witness = (1..grid.len())
        .find(|&i| (0..num_states).any(|j| sets[i - 1][j] && !sets[i][j]))
        .map(|i| IndexabilityWitness {
            nu_low: grid[i - 1],
            nu_high: grid[i],
            passive_low: ids(&sets[i - 1]),
            passive_high: ids(&sets[i]),
        });

    Ok(WhittleIndexTable {
        class,
        criterion: IndexCriterion::Discounted { beta },
        entries: values
            .into_iter()
            .enumerate()
            .map(|(j, value)| WhittleEntry {
                state: StateId::new(class, j),
                value,
                converged: true,
            })
            .collect(),
        indexable: witness.is_none(),
        witness,
        dummy_index: 0.0,
    })
}

/// Discounted Whittle indices of `class`; fails with [`Error::NotIndexable`] (carrying the
/// witness) when the passive sets are not nested.
pub fn whittle_index(model: &ModelInstance, class: usize, beta: f64) -> Result<WhittleIndexTable> {
    let table = whittle_index_report(model, class, beta, &WhittleOptions::default())?;
    if table.indexable {
        Ok(table)
    } else {
        Err(table.not_indexable_error())
    }
}

/// Limiting indices as `β ↓ 0` along `betas` (strictly decreasing, at least four): the value
/// at the smallest rate, flagged converged when it agrees with the previous one to
/// `1e-4·(1 + |ν|)`.
pub fn whittle_limit_with(
    model: &ModelInstance,
    class: usize,
    betas: &[f64],
    opts: &WhittleOptions,
) -> Result<WhittleIndexTable> {
    if betas.len() < 4
        || betas.windows(2).any(|w| !(w[1] < w[0]))
        || betas.iter().any(|b| !(*b > 0.0))
    {
        return Err(Error::InvalidInput(
            "limit indices need at least four strictly decreasing positive discount rates".into(),
        ));
    }
    let inner = WhittleOptions {
        execution: Execution::Sequential,
        ..*opts
    };
    let tables = par::map_indexed(betas, opts.execution, |_, &b| {
        whittle_index_report(model, class, b, &inner)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if let Some(bad) = tables.iter().find(|t| !t.indexable) {
        return Err(bad.not_indexable_error());
    }
    let last = &tables[tables.len() - 1];
    let prev = &tables[tables.len() - 2];
    let entries = last
        .entries
        .iter()
        .zip(&prev.entries)
        .map(|(l, p)| {
            let converged = match (l.value, p.value) {
                (IndexValue::Finite(a), IndexValue::Finite(b)) => {
                    (a - b).abs() <= LIMIT_TOL * (1.0 + a.abs())
                }
                (a, b) => a == b,
            };
            WhittleEntry {
                state: l.state,
                value: l.value,
                converged,
            }
        })
        .collect();
    Ok(WhittleIndexTable {
        class,
        criterion: IndexCriterion::Limit {
            betas: betas.to_vec(),
        },
        entries,
        indexable: true,
        witness: None,
        dummy_index: 0.0,
    })
}

pub fn whittle_limit(
    model: &ModelInstance,
    class: usize,
    betas: &[f64],
) -> Result<WhittleIndexTable> {
    whittle_limit_with(model, class, betas, &WhittleOptions::default())
}

/// Activate states in decreasing index order among those with a positive index; states
/// with `ν ≤ 0` are never active. Equal indices are ordered by `(k, j)`.
pub fn whittle_policy(tables: &[WhittleIndexTable]) -> Result<PriorityPolicy> {
    if let Some(bad) = tables.iter().find(|t| !t.indexable) {
        return Err(bad.not_indexable_error());
    }
    let mut entries: Vec<(StateId, f64)> = tables
        .iter()
        .flat_map(|t| t.entries.iter().map(|e| (e.state, e.value.as_f64())))
        .collect();
    entries.sort_by_key(|e| e.0);
    let mut order: Vec<(StateId, f64)> = entries
        .iter()
        .copied()
        .filter(|(_, v)| *v > POSITIVE_INDEX_TOL)
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1));
    let never = entries
        .iter()
        .filter(|(_, v)| !(*v > POSITIVE_INDEX_TOL))
        .map(|(s, _)| *s)
        .collect();
    Ok(PriorityPolicy {
        order: order.into_iter().map(|(s, _)| s).collect(),
        never_active: never,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AbandonmentClass, BanditClass, Population};
    use crate::scenarios;

    fn abandonment(mu: f64, theta: f64, c0: f64) -> AbandonmentClass {
        AbandonmentClass {
            arrival_rate: 1.0,
            service_rate: mu,
            queue_abandonment: theta,
            service_abandonment: 0.0,
            queue_cost: c0,
            service_cost: 0.0,
            queue_abandonment_penalty: 0.0,
            service_abandonment_penalty: 0.0,
        }
    }

    fn table(values: &[(StateId, f64)]) -> WhittleIndexTable {
        WhittleIndexTable {
            class: 0,
            criterion: IndexCriterion::Discounted { beta: 1.0 },
            entries: values
                .iter()
                .map(|(s, v)| WhittleEntry {
                    state: *s,
                    value: IndexValue::Finite(*v),
                    converged: true,
                })
                .collect(),
            indexable: true,
            witness: None,
            dummy_index: 0.0,
        }
    }

    #[test]
    fn discounted_index_matches_closed_form() {
        // Single state: ν(β) = C0(β+μ)/(β+θ) for C1 = 0.
        let m = ModelInstance::multi_server_abandonment(&[abandonment(2.0, 1.0, 3.0)], 1.0);
        for beta in [1.0, 0.1, 0.01] {
            let t = whittle_index(&m, 0, beta).unwrap();
            let expected = 3.0 * (beta + 2.0) / (beta + 1.0);
            let got = t.entries[0].value.finite().unwrap();
            assert!(
                (got - expected).abs() <= 1e-6,
                "β={beta}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn limit_approaches_the_abandonment_index() {
        let m = ModelInstance::multi_server_abandonment(&[abandonment(2.0, 1.0, 3.0)], 1.0);
        let t = whittle_limit(&m, 0, &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6]).unwrap();
        let v = t.entries[0].value.finite().unwrap();
        assert!((v - 6.0).abs() <= 1e-4, "{v}");
        assert!(t.entries[0].converged);
    }

    #[test]
    fn zero_cost_class_has_zero_index() {
        let mut m = scenarios::nonindexable_3state();
        for c in &mut m.classes {
            c.cost_active.iter_mut().for_each(|v| *v = 0.0);
            c.cost_passive.iter_mut().for_each(|v| *v = 0.0);
        }
        let t = whittle_index(&m, 0, 0.1).unwrap();
        assert!(t.entries.iter().all(|e| e.value == IndexValue::Finite(0.0)));
        let lim = whittle_limit(&m, 0, &DEFAULT_BETAS).unwrap();
        assert!(lim
            .entries
            .iter()
            .all(|e| e.value == IndexValue::Finite(0.0) && e.converged));
    }

    #[test]
    fn dummy_class_has_zero_index() {
        let m = ModelInstance {
            alpha: 1.0,
            population: Population::Fixed {
                counts: vec![vec![1.0]],
            },
            classes: vec![BanditClass {
                arrival_rate: 0.0,
                entry_dist: vec![1.0],
                gen_passive: vec![vec![0.0, 0.0]],
                gen_active: vec![vec![0.0, 0.0]],
                cost_passive: vec![0.0],
                cost_active: vec![0.0],
            }],
        };
        let t = whittle_index(&m, 0, 0.5).unwrap();
        assert_eq!(t.entries[0].value, IndexValue::Finite(0.0));
        assert_eq!(t.dummy_index, 0.0);
    }

    #[test]
    fn three_state_class_is_not_indexable() {
        let m = scenarios::nonindexable_3state();
        match whittle_index(&m, 0, 0.01) {
            Err(Error::NotIndexable {
                nu_low,
                nu_high,
                passive_low,
                passive_high,
                ..
            }) => {
                assert!(nu_low < nu_high);
                assert!(passive_low.iter().any(|s| !passive_high.contains(s)));
            }
            other => panic!("expected a witness, got {other:?}"),
        }
        let report = whittle_index_report(&m, 0, 0.01, &WhittleOptions::default()).unwrap();
        assert!(!report.indexable);
        assert!(whittle_policy(&[report]).is_err());
    }

    #[test]
    fn scaling_costs_scales_indices() {
        let m = ModelInstance::multi_server_abandonment(&[abandonment(1.5, 0.7, 2.0)], 1.0);
        let mut scaled = m.clone();
        for c in &mut scaled.classes {
            c.cost_passive.iter_mut().for_each(|v| *v *= 3.0);
        }
        let a = whittle_index(&m, 0, 0.2).unwrap().entries[0]
            .value
            .finite()
            .unwrap();
        let b = whittle_index(&scaled, 0, 0.2).unwrap().entries[0]
            .value
            .finite()
            .unwrap();
        assert!((b - 3.0 * a).abs() <= 1e-6 * 3.0);
    }

    #[test]
    fn policy_from_indices() {
        let s = |k, j| StateId::new(k, j);
        let p = whittle_policy(&[
            table(&[(s(0, 0), 5.0), (s(0, 1), 3.0)]),
            table(&[(s(1, 0), -1.0)]),
        ])
        .unwrap();
        assert_eq!(p.order, vec![s(0, 0), s(0, 1)]);
        assert_eq!(p.never_active, vec![s(1, 0)]);

        let tied = whittle_policy(&[table(&[(s(0, 1), 2.0), (s(0, 0), 2.0)])]).unwrap();
        assert_eq!(tied.order, vec![s(0, 0), s(0, 1)]);
        assert!(tied.never_active.is_empty());
    }

    #[test]
    fn fixture_indices_follow_iota() {
        let m = scenarios::mmsm_2class();
        let tables: Vec<_> = (0..2)
            .map(|k| whittle_limit(&m, k, &DEFAULT_BETAS).unwrap())
            .collect();
        let p = whittle_policy(&tables).unwrap();
        assert_eq!(p, super::super::iota_policy(&m).unwrap());
    }
}
