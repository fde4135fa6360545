//! Event-driven simulation of the `r`-scaled stochastic system under a priority
//! policy, with batch-means confidence intervals for the fluid-scaled average cost.
//!
//! Arrival rates, initial counts and the budget are scaled by `r` (counts and budget
//! rounded to the nearest integer). After every event the active counts are recomputed
//! greedily down the priority order. Costs are integrated exactly between events.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::lp::structured_optimum;
use crate::model::{Action, ModelInstance, Population};
use crate::par::{self, Execution};
use crate::policy::{allocate_counts, PriorityPolicy};

/// Name of the generator recorded in results.
pub const RNG_NAME: &str = "ChaCha8Rng";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub r: f64,
    /// Defaults to `10³ / (smallest positive rate)`.
    pub horizon: Option<f64>,
    /// Fraction of the horizon discarded before averaging.
    pub burn_in: f64,
    pub batches: usize,
    pub seed: u64,
    /// Independent stream of the seeded generator; replications use distinct streams.
    pub stream: u64,
    /// Record a time series at this spacing (fluid-scaled), if set.
    pub record_every: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            horizon: None,
            burn_in: 0.2,
            batches: 20,
            seed: 0,
            stream: 0,
            record_every: None,
        }
    }
}

impl SimConfig {
    fn check(&self) -> Result<()> {
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidInput(format!(
                "scaling r must be positive, got {}",
                self.r
            )));
        }
        if self.batches < 2 {
            return Err(Error::InvalidInput(
                "at least two batches are required".into(),
            ));
        }
        if !(0.0..=0.9).contains(&self.burn_in) {
            return Err(Error::InvalidInput(
                "burn-in fraction must lie in [0, 0.9]".into(),
            ));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidInput("horizon must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesPoint {
    pub t: f64,
    /// Cost rate divided by `r`.
    pub cost_rate: f64,
    /// Counts divided by `r`, flat `(k, j)` order.
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationResult {
    pub r: f64,
    /// Time-average cost over the retained window, divided by `r`.
    pub estimate: f64,
    /// Batch-means 95% confidence half-width (fluid scale).
    pub half_width: f64,
    pub batch_means: Vec<f64>,
    /// Time-average `[passive, active]` counts per state, divided by `r`.
    pub occupancy: Vec<[f64; 2]>,
    pub events: u64,
    pub terminal_counts: Vec<u32>,
    pub budget: u32,
    /// Largest active total seen at any event epoch.
    pub max_active: u32,
    /// Heuristic: population grew markedly over the second half of the run.
    pub unstable: bool,
    pub horizon: f64,
    pub burn_in: f64,
    pub rng: &'static str,
    pub seed: u64,
    pub stream: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub series: Option<Vec<SeriesPoint>>,
}

impl SimulationResult {
    pub fn series_csv(&self, model: &ModelInstance) -> Option<String> {
        let series = self.series.as_ref()?;
        let mut out = String::from("t,cost_rate");
        for s in model.state_ids() {
            out.push_str(&format!(",n_{}_{}", s.class + 1, s.state + 1));
        }
        out.push('\n');
        for p in series {
            out.push_str(&format!(
                "{},{}",
                crate::fmt_num(p.t),
                crate::fmt_num(p.cost_rate)
            ));
            for c in &p.counts {
                out.push(',');
                out.push_str(&crate::fmt_num(*c));
            }
            out.push('\n');
        }
        Some(out)
    }
}

/// `10³ / (smallest positive rate)`, counting arrival rates.
pub fn default_horizon(model: &ModelInstance) -> f64 {
    crate::fluid::default_horizon(model) * 5.0
}

struct Dynamics {
    arrivals: Vec<f64>,
    costs: Vec<[f64; 2]>,
    outflow: Vec<[f64; 2]>,
    /// Per origin: `(destination or None for departure, passive rate, active rate)`.
    moves: Vec<Vec<(Option<usize>, f64, f64)>>,
}

impl Dynamics {
    fn new(model: &ModelInstance, r: f64) -> Self {
        let offsets = model.class_offsets();
        let mut d = Dynamics {
            arrivals: Vec::new(),
            costs: Vec::new(),
            outflow: Vec::new(),
            moves: Vec::new(),
        };
        for (k, c) in model.classes.iter().enumerate() {
            for i in 0..c.num_states() {
                d.arrivals.push(c.arrival_rate * r * c.entry_dist[i]);
                d.costs
                    .push([c.cost(i, Action::Passive), c.cost(i, Action::Active)]);
                d.outflow
                    .push([c.outflow(Action::Passive, i), c.outflow(Action::Active, i)]);
                d.moves.push(
                    (0..=c.num_states())
                        .filter(|&col| col != i + 1)
                        .map(|col| {
                            let dest = (col > 0).then(|| offsets[k] + col - 1);
                            (dest, c.gen_passive[i][col], c.gen_active[i][col])
                        })
                        .filter(|(_, p, a)| *p > 0.0 || *a > 0.0)
                        .collect(),
                );
            }
        }
        d
    }

    fn cost_rate(&self, n: &[u32], m: &[u32]) -> f64 {
        (0..n.len())
            .map(|f| (n[f] - m[f]) as f64 * self.costs[f][0] + m[f] as f64 * self.costs[f][1])
            .sum()
    }

    fn total_rate(&self, n: &[u32], m: &[u32]) -> f64 {
        let arrivals: f64 = self.arrivals.iter().sum();
        arrivals
            + (0..n.len())
                .map(|f| {
                    (n[f] - m[f]) as f64 * self.outflow[f][0] + m[f] as f64 * self.outflow[f][1]
                })
                .sum::<f64>()
    }

    /// Apply the event selected by `u ∈ [0, total)`.
    fn fire(&self, n: &mut [u32], m: &[u32], mut u: f64) {
        for (f, a) in self.arrivals.iter().enumerate() {
            if u < *a {
                n[f] += 1;
                return;
            }
            u -= a;
        }
        let mut last = None;
        for f in 0..n.len() {
            for (action, count) in [(0, n[f] - m[f]), (1, m[f])] {
                if count == 0 {
                    continue;
                }
                for &(dest, rp, ra) in &self.moves[f] {
                    let rate = count as f64 * if action == 0 { rp } else { ra };
                    if rate <= 0.0 {
                        continue;
                    }
                    last = Some((f, dest));
                    if u < rate {
                        return move_bandit(n, f, dest);
                    }
                    u -= rate;
                }
            }
        }
        // Rounding left `u` marginally above the final rate.
        if let Some((f, dest)) = last {
            move_bandit(n, f, dest);
        }
    }
}

fn move_bandit(n: &mut [u32], from: usize, to: Option<usize>) {
    n[from] -= 1;
    if let Some(t) = to {
        n[t] += 1;
    }
}

struct Window {
    start: f64,
    end: f64,
    batches: Vec<f64>,
    total: f64,
    occupancy: Vec<[f64; 2]>,
}

impl Window {
    fn batch_len(&self) -> f64 {
        (self.end - self.start) / self.batches.len() as f64
    }

    /// Add the constant rate `value` over `[t0, t1)`, clipped to the window.
    fn add(&mut self, t0: f64, t1: f64, value: f64, n: &[u32], m: &[u32]) {
        let a = t0.max(self.start);
        let b = t1.min(self.end);
        if b <= a {
            return;
        }
        self.total += value * (b - a);
        for f in 0..n.len() {
            self.occupancy[f][0] += (n[f] - m[f]) as f64 * (b - a);
            self.occupancy[f][1] += m[f] as f64 * (b - a);
        }
        let len = self.batch_len();
        let last = self.batches.len() - 1;
        let mut s = a;
        while s < b {
            let idx = (((s - self.start) / len) as usize).min(last);
            let edge = if idx == last {
                self.end
            } else {
                self.start + (idx + 1) as f64 * len
            };
            let e = b.min(edge);
            self.batches[idx] += value * (e - s);
            if e <= s {
                break;
            }
            s = e;
        }
    }
}

/// One simulation run; bit-identical for identical inputs.
pub fn simulate(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    config: &SimConfig,
) -> Result<SimulationResult> {
    config.check()?;
    policy.check_covers(model)?;
    let r = config.r;
    let horizon = config.horizon.unwrap_or_else(|| default_horizon(model));
    let budget = (model.alpha * r).round().max(0.0) as u32;
    let order = policy.flat_order(model);
    let dyn_ = Dynamics::new(model, r);
    let mut n: Vec<u32> = match &model.population {
        Population::Fixed { counts } => counts
            .iter()
            .flatten()
            .map(|x| (x * r).round().max(0.0) as u32)
            .collect(),
        Population::Dynamic => vec![0; model.num_flat_states()],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.stream);

    let mut window = Window {
        start: config.burn_in * horizon,
        end: horizon,
        batches: vec![0.0; config.batches],
        total: 0.0,
        occupancy: vec![[0.0; 2]; n.len()],
    };
    let mut series = config.record_every.map(|_| Vec::new());
    let mut next_record = 0.0;
    let mut t = 0.0;
    let mut events = 0u64;
    let mut max_active = 0;
    let mut mid_population = None;
    let mut m = allocate_counts(&order, &n, budget);
    loop {
        let active: u32 = m.iter().sum();
        assert!(active <= budget, "activation budget exceeded");
        max_active = max_active.max(active);
        let rate = dyn_.total_rate(&n, &m);
        let cost = dyn_.cost_rate(&n, &m);
        let dt = if rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
        let t_next = (t + dt).min(horizon);
        if let (Some(s), Some(every)) = (series.as_mut(), config.record_every) {
            while next_record <= t_next && next_record <= horizon {
                s.push(SeriesPoint {
                    t: next_record,
                    cost_rate: cost / r,
                    counts: n.iter().map(|c| *c as f64 / r).collect(),
                });
                next_record += every;
            }
        }
        if mid_population.is_none() && t_next >= 0.5 * horizon {
            mid_population = Some(n.iter().sum::<u32>());
        }
        window.add(t, t_next, cost, &n, &m);
        if t_next >= horizon {
            break;
        }
        t = t_next;
        let u = rng.random::<f64>() * rate;
        dyn_.fire(&mut n, &m, u);
        events += 1;
        m = allocate_counts(&order, &n, budget);
    }

    let len = window.end - window.start;
    let batch_len = window.batch_len();
    let batch_means: Vec<f64> = window.batches.iter().map(|b| b / batch_len / r).collect();
    let b = batch_means.len() as f64;
    let mean = batch_means.iter().sum::<f64>() / b;
    let var = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
    let quantile = StudentsT::new(0.0, 1.0, b - 1.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(0.975);
    let half_width = quantile * (var / b).sqrt();
    let final_population: u32 = n.iter().sum();
    let mid = mid_population.unwrap_or(final_population) as f64;
    let unstable = !model.is_fixed()
        && (final_population as f64 - mid) > 0.25 * mid + 5.0 * (mid + 1.0).sqrt();

    Ok(SimulationResult {
        r,
        estimate: window.total / len / r,
        half_width,
        batch_means,
        occupancy: window
            .occupancy
            .iter()
            .map(|o| [o[0] / len / r, o[1] / len / r])
            .collect(),
        events,
        terminal_counts: n,
        budget,
        max_active,
        unstable,
        horizon,
        burn_in: config.burn_in,
        rng: RNG_NAME,
        seed: config.seed,
        stream: config.stream,
        series,
    })
}

/// `count` independent replications on streams `config.stream + i`, run concurrently.
pub fn replicate(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    config: &SimConfig,
    count: usize,
    exec: Execution,
) -> Result<Vec<SimulationResult>> {
    par::map_range(count, exec, |i| {
        simulate(
            model,
            policy,
            &SimConfig {
                stream: config.stream + i as u64,
                ..*config
            },
        )
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub r: f64,
    pub estimate: f64,
    pub half_width: f64,
    pub v_star: f64,
    /// `|V̂ − v*| / |v*|`, or the absolute error when `v* = 0`.
    pub relative_error: f64,
}

impl ConvergenceRow {
    pub fn csv_header() -> &'static str {
        "r,estimate,half_width,v_star,relative_error"
    }

    pub fn csv_line(&self) -> String {
        [
            self.r,
            self.estimate,
            self.half_width,
            self.v_star,
            self.relative_error,
        ]
        .map(crate::fmt_num)
        .join(",")
    }
}

/// Simulate at every scaling in `r_list` (ascending, at least two) and compare with the
/// fluid optimum `v*`. Each scaling uses its own stream; runs execute concurrently.
pub fn convergence_study(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    r_list: &[f64],
    config: &SimConfig,
    exec: Execution,
) -> Result<Vec<ConvergenceRow>> {
    if r_list.len() < 2 || r_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(
            "need at least two ascending scalings".into(),
        ));
    }
    let v_star = structured_optimum(model)?.objective;
    par::map_indexed(r_list, exec, |i, &r| {
        let res = simulate(
            model,
            policy,
            &SimConfig {
                r,
                stream: config.stream + i as u64,
                ..*config
            },
        )?;
        let err = (res.estimate - v_star).abs();
        Ok(ConvergenceRow {
            r,
            estimate: res.estimate,
            half_width: res.half_width,
            v_star,
            relative_error: if v_star != 0.0 {
                err / v_star.abs()
            } else {
                err
            },
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AbandonmentClass, StateId};
    use crate::scenarios;

    fn infinite_server(lambda: f64, theta: f64) -> (ModelInstance, PriorityPolicy) {
        let m = ModelInstance::multi_server_abandonment(
            &[AbandonmentClass {
                arrival_rate: lambda,
                service_rate: 1.0,
                queue_abandonment: theta,
                service_abandonment: 0.0,
                queue_cost: 1.0,
                service_cost: 0.0,
                queue_abandonment_penalty: 0.0,
                service_abandonment_penalty: 0.0,
            }],
            1.0,
        );
        let p = PriorityPolicy::new(&m, vec![], vec![StateId::new(0, 0)]).unwrap();
        (m, p)
    }

    #[test]
    fn passive_population_matches_infinite_server_mean() {
        let (m, p) = infinite_server(2.0, 0.5);
        let res = simulate(
            &m,
            &p,
            &SimConfig {
                r: 50.0,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (res.estimate - 4.0).abs() <= res.half_width.max(0.05),
            "{res:?}"
        );
        assert_eq!(res.max_active, 0);
    }

    #[test]
    fn frozen_chain_has_exact_cost() {
        let mut m = scenarios::nonindexable_3state();
        m.population = Population::Fixed {
            counts: vec![vec![1.0, 2.0, 0.5]],
        };
        for c in &mut m.classes {
            for row in c.gen_passive.iter_mut().chain(c.gen_active.iter_mut()) {
                row.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let p = PriorityPolicy::new(&m, vec![], m.state_ids()).unwrap();
        let res = simulate(
            &m,
            &p,
            &SimConfig {
                r: 10.0,
                horizon: Some(100.0),
                ..Default::default()
            },
        )
        .unwrap();
        let expected = -0.458 * 1.0 + -0.5308 * 2.0 + -0.6873 * 0.5;
        assert!((res.estimate - expected).abs() <= 1e-12);
        assert!(res.half_width <= 1e-12);
        assert_eq!(res.events, 0);
    }

    #[test]
    fn runs_are_reproducible_and_respect_the_budget() {
        let m = scenarios::mmsm_2class();
        let p = crate::policy::iota_policy(&m).unwrap();
        let cfg = SimConfig {
            r: 20.0,
            horizon: Some(200.0),
            seed: 11,
            record_every: Some(10.0),
            ..Default::default()
        };
        let a = simulate(&m, &p, &cfg).unwrap();
        let b = simulate(&m, &p, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.max_active <= a.budget);
        assert_eq!(a.budget, 20);
        assert!(a.series.as_ref().unwrap().len() >= 20);
        let c = simulate(&m, &p, &SimConfig { stream: 1, ..cfg }).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn config_is_validated() {
        let m = scenarios::mmsm_2class();
        let p = crate::policy::iota_policy(&m).unwrap();
        for bad in [
            SimConfig {
                r: 0.0,
                ..Default::default()
            },
            SimConfig {
                batches: 1,
                ..Default::default()
            },
            SimConfig {
                burn_in: 0.95,
                ..Default::default()
            },
        ] {
            assert!(simulate(&m, &p, &bad).is_err());
        }
    }

    #[test]
    fn replications_agree_across_modes() {
        let m = scenarios::mmsm_2class();
        let p = crate::policy::iota_policy(&m).unwrap();
        let cfg = SimConfig {
            r: 5.0,
            horizon: Some(100.0),
            ..Default::default()
        };
        let a = replicate(&m, &p, &cfg, 4, Execution::Sequential).unwrap();
        let b = replicate(&m, &p, &cfg, 4, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overloaded_queue_is_flagged() {
        // No abandonment while waiting and service capacity 1 for arrival rate 3.
        let m = ModelInstance::multi_server_abandonment(
            &[AbandonmentClass {
                arrival_rate: 3.0,
                service_rate: 1.0,
                queue_abandonment: 0.0,
                service_abandonment: 0.0,
                queue_cost: 1.0,
                service_cost: 0.0,
                queue_abandonment_penalty: 0.0,
                service_abandonment_penalty: 0.0,
            }],
            1.0,
        );
        let p = crate::policy::PriorityPolicy::new(&m, vec![StateId::new(0, 0)], vec![]).unwrap();
        let res = simulate(
            &m,
            &p,
            &SimConfig {
                r: 10.0,
                horizon: Some(200.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(res.unstable);
    }
}
