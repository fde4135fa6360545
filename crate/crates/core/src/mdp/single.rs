//! The uniformized discounted single-bandit subproblem with activation charge `ν`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{uniformization_rate, Action, ModelInstance};

/// A discrete-time discounted MDP on states `0..=J`, where state `0` is the absorbing,
/// cost-free departure state and state `j ≥ 1` is the bandit's state `j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleBanditMdp {
    pub discount: f64,
    /// `costs[s][a]`.
    pub costs: Vec<[f64; 2]>,
    /// `transitions[a][s][t]`.
    pub transitions: [Vec<Vec<f64>>; 2],
}

/// Values, action map and convergence diagnostics of a solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult<A> {
    /// Discounted values, or the bias vector for average-cost problems.
    pub values: Vec<f64>,
    /// Average cost per unit time for average-cost problems.
    pub gain: Option<f64>,
    pub actions: Vec<A>,
    pub iterations: usize,
    /// Final sup-norm residual or span.
    pub residual: f64,
}

impl SingleBanditMdp {
    pub fn num_states(&self) -> usize {
        self.costs.len()
    }

    pub fn q_value(&self, values: &[f64], s: usize, a: Action) -> f64 {
        let row = &self.transitions[a.index()][s];
        self.costs[s][a.index()]
            + self.discount * row.iter().zip(values).map(|(p, v)| p * v).sum::<f64>()
    }

    /// Greedy action at `s`, ties resolved to passive.
    pub fn greedy(&self, values: &[f64], s: usize) -> (Action, f64) {
        let q0 = self.q_value(values, s, Action::Passive);
        let q1 = self.q_value(values, s, Action::Active);
        if q1 < q0 - tie_margin(q0) {
            (Action::Active, q1)
        } else {
            (Action::Passive, q0)
        }
    }

    /// Exact values of a stationary policy.
    pub fn evaluate(&self, policy: &[Action]) -> Result<Vec<f64>> {
        let n = self.num_states();
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            let act = policy[s].index();
            b[s] = self.costs[s][act];
            for (t, p) in self.transitions[act][s].iter().enumerate() {
                a[(s, t)] -= self.discount * p;
            }
        }
        a.lu()
            .solve(&b)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::InvalidInput("singular policy evaluation system".into()))
    }
}

fn tie_margin(q: f64) -> f64 {
    1e-12 * (1.0 + q.abs())
}

/// Uniformized single-bandit problem of class `class` under discount rate `beta` and
/// activation charge `nu`: discount `q̄/(β+q̄)`, costs `(C + ν·1{a=1})/(β+q̄)` and
/// transitions `q(j|i,a)/q̄ + 1{i=j}`, each row completed by its diagonal so it sums to 1.
pub fn build_single_bandit(
    model: &ModelInstance,
    class: usize,
    beta: f64,
    nu: f64,
) -> Result<SingleBanditMdp> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "discount rate must be positive, got {beta}"
        )));
    }
    let c = model
        .classes
        .get(class)
        .ok_or_else(|| Error::InvalidInput(format!("no class {}", class + 1)))?;
    let q_bar = uniformization_rate(model);
    let n = c.num_states() + 1;
    let denom = beta + q_bar;
    let mut costs = vec![[0.0; 2]; n];
    let mut transitions = [vec![vec![0.0; n]; n], vec![vec![0.0; n]; n]];
    for a in Action::BOTH {
        let p = &mut transitions[a.index()];
        p[0][0] = 1.0;
        for i in 0..c.num_states() {
            let s = i + 1;
            let charge = if a == Action::Active { nu } else { 0.0 };
            costs[s][a.index()] = (c.cost(i, a) + charge) / denom;
            let mut off = 0.0;
            let row = c.generator(a)[i].iter().take(n);
            for (t, rate) in row.enumerate() {
                if t != s && q_bar > 0.0 {
                    p[s][t] = rate / q_bar;
                    off += p[s][t];
                }
            }
            p[s][s] = 1.0 - off;
        }
    }
    Ok(SingleBanditMdp {
        discount: if q_bar > 0.0 { q_bar / denom } else { 0.0 },
        costs,
        transitions,
    })
}

/// Value iteration until the sup-norm residual is at most `tol·(1−β̃)/(2β̃)`.
pub fn value_iteration_discounted(mdp: &SingleBanditMdp, tol: f64) -> SolveResult<Action> {
    value_iteration_capped(mdp, tol, usize::MAX)
}

fn value_iteration_capped(mdp: &SingleBanditMdp, tol: f64, max_iter: usize) -> SolveResult<Action> {
    let n = mdp.num_states();
    let beta = mdp.discount;
    let threshold = if beta > 0.0 {
        tol * (1.0 - beta) / (2.0 * beta)
    } else {
        f64::INFINITY
    };
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut residual;
    loop {
        for (s, out) in next.iter_mut().enumerate() {
            *out = mdp.greedy(&values, s).1;
        }
        residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut values, &mut next);
        iterations += 1;
        let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = 16.0 * f64::EPSILON * scale;
        if residual <= threshold.max(floor) || iterations >= max_iter {
            break;
        }
    }
    let actions = (0..n).map(|s| mdp.greedy(&values, s).0).collect();
    SolveResult {
        values,
        gain: None,
        actions,
        iterations,
        residual,
    }
}

/// Exact optimum: a short value-iteration warm start followed by policy iteration with
/// LU policy evaluation. An action only changes when the alternative beats it by a relative
/// margin, so equal-value policies cannot cycle; the reported action map then applies the
/// passive tie rule to the converged values.
pub fn solve_discounted_exact(mdp: &SingleBanditMdp) -> Result<SolveResult<Action>> {
    let warm = value_iteration_capped(mdp, 1e-10, 200);
    let mut policy = warm.actions;
    let mut iterations = warm.iterations;
    for _ in 0..10 * mdp.num_states() + 10 {
        let values = mdp.evaluate(&policy)?;
        iterations += 1;
        let improved: Vec<Action> = (0..mdp.num_states())
            .map(|s| {
                let keep = mdp.q_value(&values, s, policy[s]);
                let other = policy[s].other();
                if mdp.q_value(&values, s, other) < keep - tie_margin(keep) {
                    other
                } else {
                    policy[s]
                }
            })
            .collect();
        if improved == policy {
            let residual = (0..mdp.num_states())
                .map(|s| (mdp.greedy(&values, s).1 - values[s]).abs())
                .fold(0.0, f64::max);
            let actions = (0..mdp.num_states())
                .map(|s| mdp.greedy(&values, s).0)
                .collect();
            return Ok(SolveResult {
                values,
                gain: None,
                actions,
                iterations,
                residual,
            });
        }
        policy = improved;
    }
    Err(Error::NoConvergence {
        iterations,
        span: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AbandonmentClass, BanditClass, Population};
    use crate::scenarios;

    fn abandonment(cost: f64) -> ModelInstance {
        ModelInstance::multi_server_abandonment(
            &[AbandonmentClass {
                arrival_rate: 1.0,
                service_rate: 2.0,
                queue_abandonment: 1.0,
                service_abandonment: 0.0,
                queue_cost: cost,
                service_cost: 0.0,
                queue_abandonment_penalty: 0.0,
                service_abandonment_penalty: 0.0,
            }],
            1.0,
        )
    }

    #[test]
    fn equal_actions_do_not_cycle() {
        // Activation changes nothing: every policy has the same values.
        let class = BanditClass {
            arrival_rate: 0.0,
            entry_dist: vec![0.5, 0.5],
            gen_passive: vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.1, 0.0]],
            gen_active: vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.1, 0.0]],
            cost_passive: vec![0.0, 2.0],
            cost_active: vec![0.0, 2.0],
        };
        let m = ModelInstance {
            alpha: 1.0,
            population: Population::Fixed {
                counts: vec![vec![1.0, 1.0]],
            },
            classes: vec![class],
        };
        for beta in [1e-1, 1e-3, 1e-5] {
            let res =
                solve_discounted_exact(&build_single_bandit(&m, 0, beta, 0.0).unwrap()).unwrap();
            assert!(res.actions.iter().all(|a| *a == Action::Passive));
        }
    }

    #[test]
    fn discount_at_beta_equal_to_rate() {
        let m = abandonment(1.0);
        let mdp = build_single_bandit(&m, 0, 2.0, 0.0).unwrap();
        assert_eq!(mdp.discount, 0.5);
    }

    #[test]
    fn uniformized_single_state_class() {
        let mdp = build_single_bandit(&abandonment(3.0), 0, 1.0, 0.7).unwrap();
        let p0 = &mdp.transitions[0][1];
        let p1 = &mdp.transitions[1][1];
        assert_eq!((p0[0], p0[1]), (0.5, 0.5));
        assert_eq!((p1[0], p1[1]), (1.0, 0.0));
        assert!((mdp.costs[1][0] - 1.0).abs() < 1e-15);
        assert!((mdp.costs[1][1] - 0.7 / 3.0).abs() < 1e-15);
        assert_eq!(mdp.costs[0], [0.0, 0.0]);
    }

    #[test]
    fn rows_sum_to_one() {
        let m = scenarios::nonindexable_3state();
        let mdp = build_single_bandit(&m, 0, 0.01, 0.3).unwrap();
        for a in 0..2 {
            for row in &mdp.transitions[a] {
                assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(row.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn zero_cost_is_all_passive() {
        let mut m = abandonment(0.0);
        m.classes[0].cost_passive = vec![0.0];
        let mdp = build_single_bandit(&m, 0, 1.0, 0.0).unwrap();
        assert!(mdp.costs.iter().all(|c| *c == [0.0, 0.0]));
        let r = value_iteration_discounted(&mdp, 1e-10);
        assert!(r.values.iter().all(|v| *v == 0.0));
        assert!(r.actions.iter().all(|a| *a == Action::Passive));
    }

    #[test]
    fn geometric_series_for_a_static_bandit() {
        // No dynamics except a passive self-loop: value c/(1-β̃).
        let m = ModelInstance {
            alpha: 1.0,
            population: Population::Fixed {
                counts: vec![vec![1.0, 0.0]],
            },
            classes: vec![BanditClass {
                arrival_rate: 0.0,
                entry_dist: vec![1.0, 0.0],
                gen_passive: vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
                gen_active: vec![vec![0.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
                cost_passive: vec![2.0, 0.0],
                cost_active: vec![5.0, 0.0],
            }],
        };
        let mdp = build_single_bandit(&m, 0, 0.5, 0.0).unwrap();
        let r = value_iteration_discounted(&mdp, 1e-12);
        let c = mdp.costs[1][0];
        assert!((r.values[1] - c / (1.0 - mdp.discount)).abs() <= 1e-10);
        assert_eq!(r.actions[1], Action::Passive);
    }

    #[test]
    fn single_state_two_policy_enumeration() {
        // C(1,0) = 3, C(1,1) = 0, ν = 0: serving removes the cost faster.
        let mdp = build_single_bandit(&abandonment(3.0), 0, 1.0, 0.0).unwrap();
        let r = value_iteration_discounted(&mdp, 1e-12);
        assert_eq!(r.actions[1], Action::Active);
        let passive = mdp.evaluate(&[Action::Passive, Action::Passive]).unwrap();
        let active = mdp.evaluate(&[Action::Passive, Action::Active]).unwrap();
        assert!(active[1] < passive[1]);
        assert!((r.values[1] - active[1]).abs() <= 1e-10);
        let exact = solve_discounted_exact(&mdp).unwrap();
        assert_eq!(exact.actions, r.actions);
    }

    #[test]
    fn values_are_monotone_in_the_charge() {
        let m = scenarios::nonindexable_3state();
        let mut previous: Option<Vec<f64>> = None;
        for i in 0..40 {
            let nu = -1.0 + 0.05 * i as f64;
            let r = solve_discounted_exact(&build_single_bandit(&m, 0, 0.01, nu).unwrap()).unwrap();
            if let Some(p) = &previous {
                assert!(r.values.iter().zip(p).all(|(v, w)| *v >= w - 1e-9));
            }
            previous = Some(r.values);
        }
    }

    #[test]
    fn exact_solver_agrees_with_value_iteration() {
        let m = scenarios::nonindexable_3state();
        for nu in [-0.5, 0.0, 0.3, 0.7] {
            let mdp = build_single_bandit(&m, 0, 0.5, nu).unwrap();
            let vi = value_iteration_discounted(&mdp, 1e-11);
            let pi = solve_discounted_exact(&mdp).unwrap();
            for (a, b) in vi.values.iter().zip(&pi.values) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
