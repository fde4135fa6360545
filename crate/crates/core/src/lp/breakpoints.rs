//! Parametric sweep of the fluid LP: intervals on which the sign pattern of the
//! structured optimum (and whether the budget binds) stays constant.

use serde::Serialize;

use super::fluid::{structured_optimum, EquilibriumPoint, StateClass};
use crate::error::{Error, Result};
use crate::model::{ModelInstance, StateId};
use crate::par::{self, Execution};

/// Resolution of breakpoint bisection.
pub const BREAKPOINT_RESOLUTION: f64 = 1e-6;
const GRID_POINTS: usize = 400;
const GRID_OFFSET: f64 = 0.381_966_011_250_105;

/// The swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// The activation budget `α`.
    Alpha,
    /// The total fixed population `x(0)` at fixed `α`.
    Population,
}

impl SweepAxis {
    /// Whether moving to larger parameter values loosens the budget relative to the load.
    pub fn capacity_grows_with_parameter(self) -> bool {
        matches!(self, SweepAxis::Alpha)
    }

    fn instance(self, model: &ModelInstance, t: f64) -> Result<ModelInstance> {
        match self {
            SweepAxis::Alpha => Ok(model.with_alpha(t)),
            SweepAxis::Population => model.with_total_population(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignPattern {
    pub classes: Vec<StateClass>,
    pub binding: bool,
}

impl SignPattern {
    pub fn of(eq: &EquilibriumPoint) -> Self {
        Self {
            classes: eq.pattern(),
            binding: eq.capacity_binding,
        }
    }
}

/// One interval `[lower, upper)` of constant pattern; `upper = None` stands for `∞`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternInterval {
    pub lower: f64,
    pub upper: Option<f64>,
    /// Active-only states.
    pub high: Vec<StateId>,
    pub split: Option<StateId>,
    /// Passive-only states.
    pub low: Vec<StateId>,
    /// Zero-mass states.
    pub empty: Vec<StateId>,
    pub binding: bool,
}

impl PatternInterval {
    fn new(states: &[StateId], pattern: &SignPattern, lower: f64, upper: Option<f64>) -> Self {
        let pick = |c: StateClass| -> Vec<StateId> {
            states
                .iter()
                .zip(&pattern.classes)
                .filter(|(_, pc)| **pc == c)
                .map(|(s, _)| *s)
                .collect()
        };
        Self {
            lower,
            upper,
            high: pick(StateClass::ActiveOnly),
            split: pick(StateClass::Split).first().copied(),
            low: pick(StateClass::PassiveOnly),
            empty: pick(StateClass::Empty),
            binding: pattern.binding,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lower && self.upper.is_none_or(|u| t < u)
    }

    /// Active-only states together with the split state.
    pub fn activated(&self) -> impl Iterator<Item = StateId> + '_ {
        self.high.iter().copied().chain(self.split)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakpointTable {
    pub axis: SweepAxis,
    pub sweep_max: f64,
    /// Interior breakpoints, ascending.
    pub breakpoints: Vec<f64>,
    /// Intervals partitioning `(0, ∞)`; the last one is open-ended.
    pub intervals: Vec<PatternInterval>,
    pub degenerate_objective: bool,
}

impl BreakpointTable {
    pub fn interval_index(&self, t: f64) -> Option<usize> {
        if !(t > 0.0) || t > self.sweep_max {
            return None;
        }
        self.intervals.iter().position(|iv| iv.contains(t))
    }
}

fn pattern_at(model: &ModelInstance, axis: SweepAxis, t: f64) -> Result<SignPattern> {
    Ok(SignPattern::of(&structured_optimum(
        &axis.instance(model, t)?,
    )?))
}

/// Locate the pattern change inside `(lo, hi)` by bisection.
fn bisect(
    model: &ModelInstance,
    axis: SweepAxis,
    mut lo: f64,
    mut hi: f64,
    left: &SignPattern,
) -> Result<f64> {
    while hi - lo > BREAKPOINT_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if pattern_at(model, axis, mid)? == *left {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sweep the parameter over `(0, max]`, locating pattern changes to [`BREAKPOINT_RESOLUTION`].
pub fn sweep_breakpoints(
    model: &ModelInstance,
    axis: SweepAxis,
    max: f64,
    exec: Execution,
) -> Result<BreakpointTable> {
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::InvalidInput(format!(
            "sweep maximum must be positive and finite, got {max}"
        )));
    }
    let states = model.state_ids();
    let zero_cost = model.classes.iter().all(|c| {
        c.cost_passive
            .iter()
            .chain(&c.cost_active)
            .all(|v| *v == 0.0)
    });
    if zero_cost {
        let p = pattern_at(model, axis, max)?;
        return Ok(BreakpointTable {
            axis,
            sweep_max: max,
            breakpoints: Vec::new(),
            intervals: vec![PatternInterval::new(&states, &p, 0.0, None)],
            degenerate_objective: true,
        });
    }

    // Offset the grid by an irrational fraction so that it avoids degenerate parameter
    // values such as round breakpoints, where the pattern holds at a single point only.
    let grid: Vec<f64> = (1..=GRID_POINTS)
        .map(|i| max * (i as f64 - GRID_OFFSET) / GRID_POINTS as f64)
        .chain(std::iter::once(max))
        .collect();
    let patterns = par::map_indexed(&grid, exec, |_, &t| pattern_at(model, axis, t))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let changes: Vec<usize> = (1..grid.len())
        .filter(|&i| patterns[i] != patterns[i - 1])
        .collect();
    let breakpoints = par::map_indexed(&changes, exec, |_, &i| {
        bisect(model, axis, grid[i - 1], grid[i], &patterns[i - 1])
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut intervals = Vec::with_capacity(changes.len() + 1);
    let mut lower = 0.0;
    let mut current = &patterns[0];
    for (&i, &b) in changes.iter().zip(&breakpoints) {
        intervals.push(PatternInterval::new(&states, current, lower, Some(b)));
        lower = b;
        current = &patterns[i];
    }
    intervals.push(PatternInterval::new(&states, current, lower, None));
    Ok(BreakpointTable {
        axis,
        sweep_max: max,
        breakpoints,
        intervals,
        degenerate_objective: false,
    })
}

/// Breakpoints of the fluid optimum as the budget `α` ranges over `(0, alpha_max]`.
pub fn alpha_breakpoints(model: &ModelInstance, alpha_max: f64) -> Result<BreakpointTable> {
    sweep_breakpoints(model, SweepAxis::Alpha, alpha_max, Execution::default())
}

/// Breakpoints as the total fixed population ranges over `(0, max]` at the model's `α`.
pub fn population_breakpoints(model: &ModelInstance, max: f64) -> Result<BreakpointTable> {
    sweep_breakpoints(model, SweepAxis::Population, max, Execution::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AbandonmentClass;
    use crate::scenarios;

    #[test]
    fn single_abandonment_class_has_one_breakpoint() {
        // ι = μ·C0/θ > 0; full service needs α = λ/μ = 0.5.
        let m = ModelInstance::multi_server_abandonment(
            &[AbandonmentClass {
                arrival_rate: 1.0,
                service_rate: 2.0,
                queue_abandonment: 1.0,
                service_abandonment: 0.0,
                queue_cost: 1.0,
                service_cost: 0.0,
                queue_abandonment_penalty: 0.0,
                service_abandonment_penalty: 0.0,
            }],
            1.0,
        );
        let t = alpha_breakpoints(&m, 2.0).unwrap();
        assert_eq!(t.breakpoints.len(), 1);
        assert!((t.breakpoints[0] - 0.5).abs() <= 1e-5);
        assert!(t.intervals[0].binding && t.intervals[0].split.is_some());
        assert!(!t.intervals[1].binding);
        assert_eq!(t.intervals[1].high, vec![StateId::new(0, 0)]);
    }

    #[test]
    fn three_state_population_sweep() {
        let m = scenarios::nonindexable_3state();
        let t = sweep_breakpoints(&m, SweepAxis::Population, 10.0, Execution::Sequential).unwrap();
        let expected = [2.4, 3.6, 7.36];
        assert_eq!(t.breakpoints.len(), 3);
        for (b, e) in t.breakpoints.iter().zip(expected) {
            assert!((b - e).abs() <= 0.01, "{b} vs {e}");
        }
        assert!(!t.intervals[0].binding);
        assert!(t.intervals[1..].iter().all(|iv| iv.binding));
    }

    #[test]
    fn zero_cost_sweep_is_degenerate() {
        let mut m = scenarios::nonindexable_3state();
        for c in &mut m.classes {
            c.cost_active.iter_mut().for_each(|v| *v = 0.0);
            c.cost_passive.iter_mut().for_each(|v| *v = 0.0);
        }
        let t = alpha_breakpoints(&m, 5.0).unwrap();
        assert!(t.degenerate_objective);
        assert_eq!(t.intervals.len(), 1);
        assert!(t.intervals[0].contains(3.0));
    }

    #[test]
    fn execution_modes_agree() {
        let m = scenarios::nonindexable_3state();
        let a = sweep_breakpoints(&m, SweepAxis::Population, 5.0, Execution::Sequential).unwrap();
        let b = sweep_breakpoints(&m, SweepAxis::Population, 5.0, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
