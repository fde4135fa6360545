//! Membership of a priority policy in the set induced by *some* optimal equilibrium.
//!
//! The fluid optimum is rarely unique. A policy rejected against the canonical
//! (structured) optimum may still be admitted by another vertex of the optimal face, so
//! the search restricts the program to its optimal face (via complementary slackness)
//! and optimizes a sequence of secondary objectives over it: policy-guided ones first
//! (reward activity high in the order and passivity low in it), then seeded random
//! directions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{pi_star::is_in_pi_star, PriorityPolicy};
use crate::error::Result;
use crate::lp::{
    build_fluid_lp, column, solve_lp, structured_optimum, EquilibriumPoint, LpProblem, LpSolution,
    RowKind,
};
use crate::model::{Action, ModelInstance};

/// Relative tolerance on reduced costs and duals when identifying the optimal face.
pub const FACE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MembershipSource {
    Canonical,
    /// Vertex reached with the named secondary objective.
    Alternate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub member: bool,
    pub source: Option<MembershipSource>,
    /// Optimal points examined, the canonical one included.
    pub candidates: usize,
    #[serde(skip)]
    pub witness: Option<EquilibriumPoint>,
}

/// Test `policy` against the structured optimum, then against alternate optimal vertices
/// (three policy-guided objectives followed by `random_directions` random ones).
pub fn pi_star_membership(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    random_directions: usize,
    seed: u64,
) -> Result<MembershipReport> {
    policy.check_covers(model)?;
    let canonical = structured_optimum(model)?;
    if is_in_pi_star(policy, &canonical, model.alpha) {
        return Ok(MembershipReport {
            member: true,
            source: Some(MembershipSource::Canonical),
            candidates: 1,
            witness: Some(canonical),
        });
    }

    let base = build_fluid_lp(model)?;
    let (face, cols) = optimal_face(&base)?;
    let n_vars = base.num_vars();

    let n_states = model.num_flat_states();
    let order = policy.flat_order(model);
    let mut rank = vec![2 * n_states; n_states];
    for (i, &f) in order.iter().enumerate() {
        rank[f] = i;
    }
    let mut directions: Vec<(String, Vec<f64>)> = Vec::new();
    let guided = |w_active: &dyn Fn(usize) -> f64, w_passive: &dyn Fn(usize) -> f64| {
        let mut c = vec![0.0; n_vars];
        for f in 0..n_states {
            c[column(f, Action::Active)] = w_active(rank[f]);
            c[column(f, Action::Passive)] = w_passive(rank[f]);
        }
        c
    };
    let n = n_states as f64;
    directions.push((
        "activate by priority".into(),
        guided(&|r| r as f64, &|_| 0.0),
    ));
    directions.push((
        "idle by reverse priority".into(),
        guided(&|_| 0.0, &|r| n - r as f64),
    ));
    directions.push((
        "priority both ways".into(),
        guided(&|r| r as f64, &|r| n - r as f64),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..random_directions {
        let c = (0..n_vars).map(|_| rng.random_range(-1.0..1.0)).collect();
        directions.push((format!("random {}", i + 1), c));
    }

    let mut face = face;
    let mut candidates = 1;
    for (name, c) in directions {
        face.objective = cols.iter().map(|&j| c[j]).collect();
        let Ok(sub) = solve_lp(&face) else { continue };
        candidates += 1;
        let mut x = vec![0.0; n_vars];
        for (v, &j) in sub.x.iter().zip(&cols) {
            x[j] = *v;
        }
        let sol = LpSolution {
            objective: base.objective_value(&x),
            x,
            basis: Vec::new(),
            duals: Vec::new(),
            iterations: sub.iterations,
        };
        let eq = EquilibriumPoint::from_solution(model, &sol);
        if is_in_pi_star(policy, &eq, model.alpha) {
            return Ok(MembershipReport {
                member: true,
                source: Some(MembershipSource::Alternate(name)),
                candidates,
                witness: Some(eq),
            });
        }
    }
    Ok(MembershipReport {
        member: false,
        source: None,
        candidates,
        witness: None,
    })
}

/// The set of optimal solutions of `lp` as a program of its own: by complementary
/// slackness with one optimal dual `y`, a feasible point is optimal exactly when it is zero
/// on every column with positive reduced cost and tight on every `≤` row with `y ≠ 0`.
/// Returns the restricted program and the original index of each of its columns.
pub fn optimal_face(lp: &LpProblem) -> Result<(LpProblem, Vec<usize>)> {
    let sol = solve_lp(lp)?;
    let scale = 1.0 + lp.objective.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let tol = FACE_TOL * scale;
    let keep: Vec<bool> = (0..lp.num_vars())
        .map(|j| {
            let reduced = lp.objective[j]
                - lp.rows
                    .iter()
                    .zip(&sol.duals)
                    .map(|(r, y)| r.coeffs[j] * y)
                    .sum::<f64>();
            reduced <= tol
        })
        .collect();
    let (mut face, cols) = lp.restrict(&keep);
    for (row, y) in face.rows.iter_mut().zip(&sol.duals) {
        if row.kind == RowKind::Le && y.abs() > tol {
            row.kind = RowKind::Eq;
        }
    }
    Ok((face, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BanditClass, Population, StateId};

    /// Two identical static-cost states: every split of the mass is optimal.
    fn tied_model() -> ModelInstance {
        let class = BanditClass {
            arrival_rate: 0.0,
            entry_dist: vec![1.0, 0.0],
            gen_passive: vec![vec![0.0, -1.0, 1.0], vec![0.0, 1.0, -1.0]],
            gen_active: vec![vec![0.0, -1.0, 1.0], vec![0.0, 1.0, -1.0]],
            cost_passive: vec![1.0, 1.0],
            cost_active: vec![0.0, 0.0],
        };
        ModelInstance {
            alpha: 0.5,
            population: Population::Fixed {
                counts: vec![vec![1.0, 0.0]],
            },
            classes: vec![class],
        }
    }

    #[test]
    fn both_orders_are_admitted_somewhere_on_a_tied_face() {
        let m = tied_model();
        for order in [
            vec![StateId::new(0, 0), StateId::new(0, 1)],
            vec![StateId::new(0, 1), StateId::new(0, 0)],
        ] {
            let p = PriorityPolicy::new(&m, order, vec![]).unwrap();
            let report = pi_star_membership(&m, &p, 4, 1).unwrap();
            assert!(report.member, "{report:?}");
        }
    }

    #[test]
    fn a_policy_idling_an_active_state_is_rejected() {
        let m = tied_model();
        let p = PriorityPolicy::new(&m, vec![], m.state_ids()).unwrap();
        let report = pi_star_membership(&m, &p, 4, 1).unwrap();
        assert!(!report.member);
        assert!(report.candidates > 1);
    }
}
