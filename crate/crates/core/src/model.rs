//! Multi-class restless bandit model.
//!
//! A class-`k` bandit lives on states `1..=J_k`; state `0` is the departure
//! pseudo-state. Generators are stored as `J_k x (J_k + 1)` rate matrices whose
//! column `0` holds departure rates and whose diagonal is never stored: the
//! diagonal `q_k(i|i,a)` is always derived as minus the total outflow.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance used when validating probabilities and rates.
pub const VALIDATION_TOL: f64 = 1e-12;

/// A `(class, state)` pair, zero-based internally and printed one-based as `k.j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateId {
    pub class: usize,
    pub state: usize,
}

impl StateId {
    pub fn new(class: usize, state: usize) -> Self {
        Self { class, state }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.class + 1, self.state + 1)
    }
}

impl FromStr for StateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("state id {s:?} is not of the form k.j"));
        let (k, j) = s.split_once('.').ok_or_else(bad)?;
        let k: usize = k.trim().parse().map_err(|_| bad())?;
        let j: usize = j.trim().parse().map_err(|_| bad())?;
        if k == 0 || j == 0 {
            return Err(bad());
        }
        Ok(Self::new(k - 1, j - 1))
    }
}

impl Serialize for StateId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Passive (`0`) or active (`1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Passive = 0,
    Active = 1,
}

impl Action {
    pub const BOTH: [Action; 2] = [Action::Passive, Action::Active];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Action {
        match self {
            Action::Passive => Action::Active,
            Action::Active => Action::Passive,
        }
    }
}

/// One bandit class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditClass {
    pub arrival_rate: f64,
    pub entry_dist: Vec<f64>,
    /// Rows are origin states `1..=J`, column `0` is departure.
    pub gen_passive: Vec<Vec<f64>>,
    pub gen_active: Vec<Vec<f64>>,
    pub cost_passive: Vec<f64>,
    pub cost_active: Vec<f64>,
}

impl BanditClass {
    pub fn num_states(&self) -> usize {
        self.cost_passive.len()
    }

    pub fn generator(&self, action: Action) -> &[Vec<f64>] {
        match action {
            Action::Passive => &self.gen_passive,
            Action::Active => &self.gen_active,
        }
    }

    pub fn cost(&self, state: usize, action: Action) -> f64 {
        match action {
            Action::Passive => self.cost_passive[state],
            Action::Active => self.cost_active[state],
        }
    }

    /// Rate from zero-based `from` to destination column `to` (`0` = departure,
    /// `j + 1` = state `j`). The diagonal is derived.
    pub fn rate(&self, action: Action, from: usize, to: usize) -> f64 {
        if to == from + 1 {
            -self.outflow(action, from)
        } else {
            self.generator(action)[from][to]
        }
    }

    /// Departure rate `q_k(0|i,a)`.
    pub fn departure_rate(&self, action: Action, from: usize) -> f64 {
        self.generator(action)[from][0]
    }

    /// Total outflow `-q_k(i|i,a)`, departures included.
    pub fn outflow(&self, action: Action, from: usize) -> f64 {
        self.generator(action)[from]
            .iter()
            .enumerate()
            .filter(|&(col, _)| col != from + 1)
            .map(|(_, r)| *r)
            .sum()
    }

    pub fn admits_departure(&self) -> bool {
        (0..self.num_states()).any(|i| {
            Action::BOTH
                .iter()
                .any(|&a| self.departure_rate(a, i) > 0.0)
        })
    }

    fn zero_diagonals(&mut self) {
        for gen in [&mut self.gen_passive, &mut self.gen_active] {
            for (i, row) in gen.iter_mut().enumerate() {
                if let Some(d) = row.get_mut(i + 1) {
                    *d = 0.0;
                }
            }
        }
    }
}

/// Initial population description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Population {
    /// Per-class, per-state initial counts (fluid masses or integers).
    Fixed {
        counts: Vec<Vec<f64>>,
    },
    Dynamic,
}

/// The full problem datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInstance {
    pub alpha: f64,
    pub population: Population,
    pub classes: Vec<BanditClass>,
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Parameters of one class of the multi-server queue with abandonments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbandonmentClass {
    pub arrival_rate: f64,
    pub service_rate: f64,
    /// Abandonment rate while waiting.
    pub queue_abandonment: f64,
    /// Abandonment rate while in service.
    pub service_abandonment: f64,
    pub queue_cost: f64,
    pub service_cost: f64,
    /// Penalty per abandonment from the queue.
    pub queue_abandonment_penalty: f64,
    /// Penalty per abandonment from service.
    pub service_abandonment_penalty: f64,
}

impl AbandonmentClass {
    /// Single-state bandit: waiting is passive, in service is active.
    /// Abandonment penalties are folded into the holding costs.
    pub fn to_bandit(&self) -> BanditClass {
        BanditClass {
            arrival_rate: self.arrival_rate,
            entry_dist: vec![1.0],
            gen_passive: vec![vec![self.queue_abandonment, 0.0]],
            gen_active: vec![vec![self.service_rate + self.service_abandonment, 0.0]],
            cost_passive: vec![
                self.queue_cost + self.queue_abandonment_penalty * self.queue_abandonment,
            ],
            cost_active: vec![
                self.service_cost + self.service_abandonment_penalty * self.service_abandonment,
            ],
        }
    }
}

impl ModelInstance {
    /// Parse a model document and zero any diagonal entries present in the generators.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut model: ModelInstance = serde_json::from_str(text)?;
        model.check_shapes()?;
        for class in &mut model.classes {
            class.zero_diagonals();
        }
        model.check_finite()?;
        Ok(model)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Multi-class `M/M/S+M` queue as a dynamic restless bandit with budget `servers`.
    pub fn multi_server_abandonment(classes: &[AbandonmentClass], servers: f64) -> Self {
        Self {
            alpha: servers,
            population: Population::Dynamic,
            classes: classes.iter().map(AbandonmentClass::to_bandit).collect(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self.population, Population::Fixed { .. })
    }

    /// Total number of `(class, state)` pairs.
    pub fn num_flat_states(&self) -> usize {
        self.classes.iter().map(BanditClass::num_states).sum()
    }

    /// All state ids in `(k, j)` lexicographic order; position equals the flat index.
    pub fn state_ids(&self) -> Vec<StateId> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(k, c)| (0..c.num_states()).map(move |j| StateId::new(k, j)))
            .collect()
    }

    pub fn class_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.classes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for c in &self.classes {
            acc += c.num_states();
            offsets.push(acc);
        }
        offsets
    }

    pub fn flat_index(&self, id: StateId) -> usize {
        self.classes[..id.class]
            .iter()
            .map(BanditClass::num_states)
            .sum::<usize>()
            + id.state
    }

    pub fn contains(&self, id: StateId) -> bool {
        id.class < self.classes.len() && id.state < self.classes[id.class].num_states()
    }

    /// Initial mass per class, `x_k(0)`, for fixed populations.
    pub fn class_masses(&self) -> Option<Vec<f64>> {
        match &self.population {
            Population::Fixed { counts } => Some(counts.iter().map(|c| c.iter().sum()).collect()),
            Population::Dynamic => None,
        }
    }

    /// Copy with the fixed population rescaled so that the total mass equals `total`,
    /// keeping the per-state composition. An all-zero population puts the mass in state 1
    /// of each class, split equally across classes.
    pub fn with_total_population(&self, total: f64) -> Result<Self> {
        let Population::Fixed { counts } = &self.population else {
            return Err(Error::InvalidInput(
                "population rescaling requires a fixed population".into(),
            ));
        };
        let current: f64 = counts.iter().flatten().sum();
        let counts = if current > 0.0 {
            counts
                .iter()
                .map(|c| c.iter().map(|v| v * total / current).collect())
                .collect()
        } else {
            let share = total / self.classes.len() as f64;
            self.classes
                .iter()
                .map(|c| {
                    let mut row = vec![0.0; c.num_states()];
                    row[0] = share;
                    row
                })
                .collect()
        };
        Ok(Self {
            population: Population::Fixed { counts },
            ..self.clone()
        })
    }

    /// Copy with `X_k(0) = n` bandits of every class, all starting in state 1.
    pub fn with_class_counts(&self, n: u32) -> Self {
        let counts = self
            .classes
            .iter()
            .map(|c| {
                let mut row = vec![0.0; c.num_states()];
                row[0] = n as f64;
                row
            })
            .collect();
        Self {
            population: Population::Fixed { counts },
            ..self.clone()
        }
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            alpha,
            ..self.clone()
        }
    }

    fn check_shapes(&self) -> Result<()> {
        for (k, c) in self.classes.iter().enumerate() {
            let j = c.num_states();
            let bad = |what: &str| {
                Error::InvalidInput(format!("class {}: {what} has the wrong shape", k + 1))
            };
            if c.cost_active.len() != j || c.entry_dist.len() != j {
                return Err(bad("cost_active/entry_dist"));
            }
            for gen in [&c.gen_passive, &c.gen_active] {
                if gen.len() != j || gen.iter().any(|row| row.len() != j + 1) {
                    return Err(bad("generator"));
                }
            }
        }
        if let Population::Fixed { counts } = &self.population {
            if counts.len() != self.classes.len()
                || counts
                    .iter()
                    .zip(&self.classes)
                    .any(|(row, c)| row.len() != c.num_states())
            {
                return Err(Error::InvalidInput(
                    "population counts have the wrong shape".into(),
                ));
            }
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        let mut all = vec![self.alpha];
        for c in &self.classes {
            all.push(c.arrival_rate);
            all.extend(&c.entry_dist);
            all.extend(&c.cost_passive);
            all.extend(&c.cost_active);
            all.extend(c.gen_passive.iter().flatten());
            all.extend(c.gen_active.iter().flatten());
        }
        if let Population::Fixed { counts } = &self.population {
            all.extend(counts.iter().flatten());
        }
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "model contains a non-finite number".into(),
            ));
        }
        Ok(())
    }
}

/// List every violated model invariant. Never mutates the input.
pub fn validate(model: &ModelInstance) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = model.check_shapes() {
        report.push("model", e.to_string());
        return report;
    }
    if let Err(e) = model.check_finite() {
        report.push("model", e.to_string());
    }
    if model.classes.is_empty() {
        report.push("classes", "at least one class is required");
    }
    if !(model.alpha > 0.0) {
        report.push("alpha", "activation budget must be positive");
    }
    let fixed = model.is_fixed();
    for (k, c) in model.classes.iter().enumerate() {
        let loc = |s: &str| format!("classes[{}].{s}", k + 1);
        let j = c.num_states();
        if j == 0 {
            report.push(loc("num_states"), "class must have at least one state");
            continue;
        }
        if c.entry_dist.iter().any(|p| *p < 0.0) {
            report.push(loc("entry_dist"), "entry probabilities must be nonnegative");
        }
        let total: f64 = c.entry_dist.iter().sum();
        if (total - 1.0).abs() > VALIDATION_TOL {
            report.push(
                loc("entry_dist"),
                format!("entry distribution sums to {total}, not 1"),
            );
        }
        for (name, gen) in [
            ("gen_passive", &c.gen_passive),
            ("gen_active", &c.gen_active),
        ] {
            for (i, row) in gen.iter().enumerate() {
                for (col, r) in row.iter().enumerate() {
                    if col != i + 1 && (*r < 0.0 || !r.is_finite()) {
                        report.push(
                            format!("{}[{}][{col}]", loc(name), i + 1),
                            "off-diagonal rates must be finite and nonnegative",
                        );
                    }
                }
            }
        }
        if c.arrival_rate < 0.0 {
            report.push(loc("arrival_rate"), "arrival rate must be nonnegative");
        }
        if c.arrival_rate == 0.0 && c.admits_departure() {
            report.push(
                loc("gen"),
                "a class without arrivals must have zero departure rates",
            );
        }
        if fixed && c.arrival_rate != 0.0 {
            report.push(loc("arrival_rate"), "fixed population requires λ_k = 0");
        }
        if !fixed {
            if !(c.arrival_rate > 0.0) {
                report.push(loc("arrival_rate"), "dynamic population requires λ_k > 0");
            }
            if !c.admits_departure() {
                report.push(loc("gen"), "dynamic class must admit departure");
            }
        }
    }
    if let Population::Fixed { counts } = &model.population {
        for (k, row) in counts.iter().enumerate() {
            if row.iter().any(|v| *v < 0.0) {
                report.push(
                    format!("population.counts[{}]", k + 1),
                    "initial counts must be nonnegative",
                );
            }
        }
    }
    report
}

/// Add `shift` to every passive cost, turning "at most α active" into "exactly α active"
/// once the shift is large enough.
pub fn exactly_alpha_transform(model: &ModelInstance, shift: f64) -> Result<ModelInstance> {
    if !(shift >= 0.0) || !shift.is_finite() {
        return Err(Error::InvalidInput(format!(
            "passive cost shift must be a nonnegative finite number, got {shift}"
        )));
    }
    let mut out = model.clone();
    for c in &mut out.classes {
        for v in &mut c.cost_passive {
            *v += shift;
        }
    }
    Ok(out)
}

/// `max_{i,k,a} -q_k(i|i,a)`; zero when all generators vanish.
pub fn uniformization_rate(model: &ModelInstance) -> f64 {
    model
        .classes
        .iter()
        .flat_map(|c| {
            (0..c.num_states())
                .flat_map(move |i| Action::BOTH.into_iter().map(move |a| c.outflow(a, i)))
        })
        .fold(0.0, f64::max)
}
