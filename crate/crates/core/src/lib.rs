//! Fluid relaxations, priority policies and Whittle indices for multi-class
//! restless bandits.
//!
//! The pipeline runs from a [`model::ModelInstance`] through the fluid linear
//! program ([`lp`]) to an optimal equilibrium point, from which asymptotically
//! optimal priority policies are built ([`policy`]). The remaining modules check
//! those policies: fluid ODE integration and attractor sampling ([`fluid`]),
//! exact Markov decision solvers for small instances ([`mdp`]) and scaled
//! stochastic simulation ([`sim`]).
//!
//! Sample-level work (attractor samples, replications, Bellman sweeps, grid
//! sweeps) fans out over rayon with the default `parallel` feature; every such
//! entry point takes an [`par::Execution`] so results can be compared against the
//! sequential path.
//!
//! ```
//! use restless::{lp, policy, scenarios};
//!
//! let model = scenarios::nonindexable_3state().with_total_population(3.0)?;
//! let table = lp::population_breakpoints(&model, 10.0)?;
//! let chosen = policy::select_policy(&table, 3.0)?;
//! assert_eq!(chosen.name().as_deref(), Some("prio12"));
//! let x_star = lp::structured_optimum(&model)?;
//! assert!(policy::is_in_pi_star(&chosen, &x_star, model.alpha));
//! # Ok::<(), restless::Error>(())
//! ```

// Range checks are written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fluid;
pub mod lp;
pub mod mdp;
pub mod model;
pub mod par;
pub mod policy;
pub mod scenarios;
pub mod sim;

pub use error::{Error, Result};

/// Format a number with 12 significant digits, the precision used by every emitted table.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let rounded = round_sig(v, 12);
    if rounded.abs() < 1e-4 || rounded.abs() >= 1e15 {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

/// Round to `digits` significant digits.
pub fn round_sig(v: f64, digits: i32) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let parsed: f64 = format!("{:.*e}", (digits - 1) as usize, v)
        .parse()
        .unwrap_or(v);
    parsed
}

/// Round every number in a JSON document to 12 significant digits, so emitted files are
/// byte-stable across platforms and runs.
pub fn round_json(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) => {
            if let Some(f) = n.as_f64().filter(|_| !n.is_i64() && !n.is_u64()) {
                if let Some(r) = serde_json::Number::from_f64(round_sig(f, 12)) {
                    *n = r;
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}
