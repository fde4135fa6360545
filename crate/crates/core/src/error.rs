use crate::model::StateId;

/// Errors raised by the solvers and builders in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("linear program is infeasible (phase-1 residual {residual:.3e})")]
    Infeasible { residual: f64 },

    #[error("linear program is unbounded (entering column {column})")]
    Unbounded { column: usize },

    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),

    #[error("no perturbation produced an optimal basis with at most one split pair")]
    StructureNotFound,

    #[error(
        "class {class} is not indexable: passive set at nu={nu_low} is {{{}}}, at nu={nu_high} it is {{{}}}",
        state_list(passive_low),
        state_list(passive_high)
    )]
    NotIndexable {
        class: usize,
        nu_low: f64,
        nu_high: f64,
        passive_low: Vec<StateId>,
        passive_high: Vec<StateId>,
    },

    #[error("value {value} is outside the tabulated range (0, {max}]")]
    OutOfRange { value: f64, max: f64 },

    #[error("fluid trajectory diverged at t={time}")]
    Diverged { time: f64 },

    #[error("state space too large: {pairs} state-action pairs exceeds cap {cap}")]
    StateSpaceTooLarge { pairs: usize, cap: usize },

    #[error("no convergence after {iterations} iterations (span {span:.3e})")]
    NoConvergence { iterations: usize, span: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

fn state_list(states: &[StateId]) -> String {
    states
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Infeasible { .. } => "infeasible",
            Error::Unbounded { .. } => "unbounded",
            Error::IterationLimit(_) => "iteration_limit",
            Error::StructureNotFound => "structure_not_found",
            Error::NotIndexable { .. } => "not_indexable",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Diverged { .. } => "diverged",
            Error::StateSpaceTooLarge { .. } => "state_space_too_large",
            Error::NoConvergence { .. } => "no_convergence",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }

    /// `{"error": kind, "message": …}` plus the variant's fields.
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        let extra = match self {
            Error::Infeasible { residual } => json!({ "residual": residual }),
            Error::Unbounded { column } => json!({ "column": column }),
            Error::IterationLimit(limit) => json!({ "limit": limit }),
            Error::NotIndexable {
                class,
                nu_low,
                nu_high,
                passive_low,
                passive_high,
            } => json!({
                "class": class,
                "witness": {
                    "nu_low": nu_low,
                    "nu_high": nu_high,
                    "passive_low": passive_low,
                    "passive_high": passive_high,
                }
            }),
            Error::OutOfRange { value, max } => json!({ "value": value, "max": max }),
            Error::Diverged { time } => json!({ "time": time }),
            Error::StateSpaceTooLarge { pairs, cap } => json!({ "pairs": pairs, "cap": cap }),
            Error::NoConvergence { iterations, span } => {
                json!({ "iterations": iterations, "span": span })
            }
            _ => json!({}),
        };
        if let (Some(obj), Some(more)) = (v.as_object_mut(), extra.as_object()) {
            obj.extend(more.clone());
        }
        v
    }
}
