//! The fluid relaxation over equilibrium occupation rates `x^a_{j,k}` and its
//! per-bandit frequency form for fixed populations.

use serde::ser::{SerializeMap, SerializeStruct};
use serde::{Serialize, Serializer};

use super::simplex::{solve_lp, LpProblem, LpSolution, RowKind, VarLabel};
use crate::error::{Error, Result};
use crate::model::{Action, ModelInstance, Population, StateId};

/// Components at or below this are treated as zero when classifying patterns.
pub const POSITIVE_TOL: f64 = 1e-9;
/// Slack below which the budget row counts as binding.
pub const BINDING_TOL: f64 = 1e-8;

const PERTURBATIONS: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// Column of `x^a` for flat state `f`.
pub fn column(flat: usize, action: Action) -> usize {
    2 * flat + action.index()
}

fn labels(model: &ModelInstance) -> Vec<VarLabel> {
    model
        .state_ids()
        .into_iter()
        .flat_map(|state| {
            Action::BOTH.map(|a| VarLabel {
                state,
                action: a.index(),
            })
        })
        .collect()
}

fn build(model: &ModelInstance, eps: f64) -> Result<LpProblem> {
    let n = 2 * model.num_flat_states();
    let offsets = model.class_offsets();
    let mut lp = LpProblem::new(n);
    lp.var_labels = labels(model);
    for (k, c) in model.classes.iter().enumerate() {
        for j in 0..c.num_states() {
            let f = offsets[k] + j;
            lp.objective[column(f, Action::Passive)] = c.cost(j, Action::Passive);
            lp.objective[column(f, Action::Active)] = c.cost(j, Action::Active);
        }
    }
    for (k, c) in model.classes.iter().enumerate() {
        for j in 0..c.num_states() {
            let mut row = vec![0.0; n];
            for i in 0..c.num_states() {
                for a in Action::BOTH {
                    row[column(offsets[k] + i, a)] = c.rate(a, i, j + 1);
                }
            }
            let inflow = c.arrival_rate * (c.entry_dist[j] + eps);
            lp.push_row(
                format!("balance {}", StateId::new(k, j)),
                row,
                RowKind::Eq,
                -inflow,
            );
        }
    }
    let mut budget = vec![0.0; n];
    for f in 0..model.num_flat_states() {
        budget[column(f, Action::Active)] = 1.0;
    }
    lp.push_row("budget", budget, RowKind::Le, model.alpha);
    if let Population::Fixed { counts } = &model.population {
        if counts.len() != model.num_classes() {
            return Err(Error::InvalidInput(
                "fixed population needs counts for every class".into(),
            ));
        }
        for (k, c) in model.classes.iter().enumerate() {
            let mut row = vec![0.0; n];
            for j in 0..c.num_states() {
                row[column(offsets[k] + j, Action::Passive)] = 1.0;
                row[column(offsets[k] + j, Action::Active)] = 1.0;
            }
            lp.push_row(
                format!("mass {}", k + 1),
                row,
                RowKind::Eq,
                counts[k].iter().sum(),
            );
        }
    }
    Ok(lp)
}

/// Balance rows `0 = λ_k p_k(j) + Σ_{i,a} x^a_{i,k} q_k(j|i,a)`, the budget row and,
/// for fixed populations, one mass row per class. Columns are `2·flat + action`.
pub fn build_fluid_lp(model: &ModelInstance) -> Result<LpProblem> {
    build(model, 0.0)
}

/// Same program with every entry probability inflated by `eps`.
pub fn build_fluid_lp_perturbed(model: &ModelInstance, eps: f64) -> Result<LpProblem> {
    build(model, eps)
}

/// Per-bandit frequency program for a fixed population: balance rows, the budget row
/// `Σ_k X_k Σ_j y¹_{j,k} ≤ α` and one normalization row per class.
pub fn build_relaxed_lp_fixed(model: &ModelInstance) -> Result<LpProblem> {
    let Some(masses) = model.class_masses() else {
        return Err(Error::InvalidInput(
            "the frequency program needs a fixed population".into(),
        ));
    };
    let n = 2 * model.num_flat_states();
    let offsets = model.class_offsets();
    let mut lp = LpProblem::new(n);
    lp.var_labels = labels(model);
    for (k, c) in model.classes.iter().enumerate() {
        for j in 0..c.num_states() {
            for a in Action::BOTH {
                lp.objective[column(offsets[k] + j, a)] = masses[k] * c.cost(j, a);
            }
        }
    }
    for (k, c) in model.classes.iter().enumerate() {
        for j in 0..c.num_states() {
            let mut row = vec![0.0; n];
            for i in 0..c.num_states() {
                for a in Action::BOTH {
                    row[column(offsets[k] + i, a)] = c.rate(a, i, j + 1);
                }
            }
            lp.push_row(
                format!("balance {}", StateId::new(k, j)),
                row,
                RowKind::Eq,
                0.0,
            );
        }
    }
    let mut budget = vec![0.0; n];
    for (k, c) in model.classes.iter().enumerate() {
        for j in 0..c.num_states() {
            budget[column(offsets[k] + j, Action::Active)] = masses[k];
        }
    }
    lp.push_row("budget", budget, RowKind::Le, model.alpha);
    for (k, c) in model.classes.iter().enumerate() {
        let mut row = vec![0.0; n];
        for j in 0..c.num_states() {
            row[column(offsets[k] + j, Action::Passive)] = 1.0;
            row[column(offsets[k] + j, Action::Active)] = 1.0;
        }
        lp.push_row(format!("normalization {}", k + 1), row, RowKind::Eq, 1.0);
    }
    Ok(lp)
}

/// Sign class of one `(class, state)` pair in an equilibrium point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateClass {
    /// `x¹ > 0`, `x⁰ = 0`.
    ActiveOnly,
    /// Both actions carry mass.
    Split,
    /// `x⁰ > 0`, `x¹ = 0`.
    PassiveOnly,
    /// No mass.
    Empty,
}

/// An optimal equilibrium point of the fluid relaxation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPoint {
    pub states: Vec<StateId>,
    pub passive: Vec<f64>,
    pub active: Vec<f64>,
    pub objective: f64,
    pub alpha: f64,
    pub capacity_binding: bool,
}

impl EquilibriumPoint {
    /// Read an LP solution (columns `2·flat + action`), clamping values below `1e-9` to zero.
    pub fn from_solution(model: &ModelInstance, solution: &LpSolution) -> Self {
        let clamp = |v: f64| if v <= POSITIVE_TOL { 0.0 } else { v };
        let nf = model.num_flat_states();
        let passive: Vec<f64> = (0..nf)
            .map(|f| clamp(solution.x[column(f, Action::Passive)]))
            .collect();
        let active: Vec<f64> = (0..nf)
            .map(|f| clamp(solution.x[column(f, Action::Active)]))
            .collect();
        let total_active: f64 = active.iter().sum();
        Self {
            states: model.state_ids(),
            objective: solution.objective,
            alpha: model.alpha,
            capacity_binding: (total_active - model.alpha).abs() <= BINDING_TOL,
            passive,
            active,
        }
    }

    pub fn get(&self, flat: usize, action: Action) -> f64 {
        match action {
            Action::Passive => self.passive[flat],
            Action::Active => self.active[flat],
        }
    }

    pub fn total(&self, flat: usize) -> f64 {
        self.passive[flat] + self.active[flat]
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.states.len()).map(|f| self.total(f)).collect()
    }

    pub fn active_total(&self) -> f64 {
        self.active.iter().sum()
    }

    pub fn classify(&self, flat: usize) -> StateClass {
        match (
            self.passive[flat] > POSITIVE_TOL,
            self.active[flat] > POSITIVE_TOL,
        ) {
            (true, true) => StateClass::Split,
            (false, true) => StateClass::ActiveOnly,
            (true, false) => StateClass::PassiveOnly,
            (false, false) => StateClass::Empty,
        }
    }

    pub fn pattern(&self) -> Vec<StateClass> {
        (0..self.states.len()).map(|f| self.classify(f)).collect()
    }

    pub fn split_pairs(&self) -> Vec<StateId> {
        (0..self.states.len())
            .filter(|&f| self.classify(f) == StateClass::Split)
            .map(|f| self.states[f])
            .collect()
    }

    /// Flat vector `x^a` laid out as LP columns.
    pub fn as_columns(&self) -> Vec<f64> {
        self.passive
            .iter()
            .zip(&self.active)
            .flat_map(|(p, a)| [*p, *a])
            .collect()
    }

    /// CSV with columns `k,j,x0,x1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,j,x0,x1\n");
        for (f, s) in self.states.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.class + 1,
                s.state + 1,
                crate::fmt_num(self.passive[f]),
                crate::fmt_num(self.active[f])
            ));
        }
        out
    }
}

struct KeyedValues<'a>(&'a EquilibriumPoint);

impl Serialize for KeyedValues<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let eq = self.0;
        let mut map = serializer.serialize_map(Some(2 * eq.states.len()))?;
        for (f, s) in eq.states.iter().enumerate() {
            map.serialize_entry(&format!("{s}.0"), &eq.passive[f])?;
            map.serialize_entry(&format!("{s}.1"), &eq.active[f])?;
        }
        map.end()
    }
}

impl Serialize for EquilibriumPoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = serializer.serialize_struct("EquilibriumPoint", 5)?;
        st.serialize_field("objective", &self.objective)?;
        st.serialize_field("alpha", &self.alpha)?;
        st.serialize_field("capacity_binding", &self.capacity_binding)?;
        st.serialize_field("split_pairs", &self.split_pairs())?;
        st.serialize_field("values", &KeyedValues(self))?;
        st.end()
    }
}

/// Solve the fluid LP and return the basic optimum as is.
pub fn fluid_optimum(model: &ModelInstance) -> Result<EquilibriumPoint> {
    let lp = build_fluid_lp(model)?;
    let sol = solve_lp(&lp)?;
    Ok(EquilibriumPoint::from_solution(model, &sol))
}

/// An optimal basic solution with at most one pair carrying both actions.
///
/// Basic solutions normally satisfy this already. Otherwise, for dynamic populations the
/// program is re-solved with entry distributions inflated by `ε ∈ {1e-4, 1e-5, 1e-6}`; the
/// first basis that repeats for two consecutive `ε` is then evaluated at `ε = 0`.
pub fn structured_optimum(model: &ModelInstance) -> Result<EquilibriumPoint> {
    let lp = build_fluid_lp(model)?;
    let sol = solve_lp(&lp)?;
    let eq = EquilibriumPoint::from_solution(model, &sol);
    if eq.split_pairs().len() <= 1 {
        return Ok(eq);
    }
    if model.is_fixed() {
        return Err(Error::StructureNotFound);
    }
    let scale = 1.0 + sol.objective.abs();
    let mut previous: Option<Vec<usize>> = None;
    for eps in PERTURBATIONS {
        let perturbed = solve_lp(&build_fluid_lp_perturbed(model, eps)?)?;
        let basis: Vec<usize> = perturbed
            .basis
            .iter()
            .copied()
            .filter(|&b| b < lp.num_vars())
            .collect();
        if previous.as_ref() == Some(&basis) {
            let mut keep = vec![false; lp.num_vars()];
            basis.iter().for_each(|&b| keep[b] = true);
            let (sub, cols) = lp.restrict(&keep);
            if let Ok(s) = solve_lp(&sub) {
                let mut x = vec![0.0; lp.num_vars()];
                for (v, &c) in s.x.iter().zip(&cols) {
                    x[c] = *v;
                }
                let full = LpSolution {
                    objective: lp.objective_value(&x),
                    x,
                    basis: cols,
                    duals: Vec::new(),
                    iterations: s.iterations,
                };
                let candidate = EquilibriumPoint::from_solution(model, &full);
                if (full.objective - sol.objective).abs() <= 1e-8 * scale
                    && candidate.split_pairs().len() <= 1
                {
                    return Ok(candidate);
                }
            }
        }
        previous = Some(basis);
    }
    Err(Error::StructureNotFound)
}
