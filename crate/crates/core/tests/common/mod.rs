//! Seeded random model generators shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restless::model::{AbandonmentClass, BanditClass, ModelInstance, Population};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator rows `[departure, to state 1, …, to state J]` with the diagonal set to minus
/// the row's outflow. Every off-diagonal transition rate is drawn from `[lo, hi)`, so the
/// chain is irreducible under either action.
fn generator(
    rng: &mut ChaCha8Rng,
    states: usize,
    departure: Option<(f64, f64)>,
    lo: f64,
    hi: f64,
) -> Vec<Vec<f64>> {
    (0..states)
        .map(|i| {
            let mut row = vec![0.0; states + 1];
            if let Some((dlo, dhi)) = departure {
                row[0] = rng.random_range(dlo..dhi);
            }
            for j in 0..states {
                if j != i {
                    row[j + 1] = rng.random_range(lo..hi);
                }
            }
            let out: f64 = row.iter().sum();
            row[i + 1] = -out;
            row
        })
        .collect()
}

/// A fixed-population class with strictly positive transition rates under both actions.
pub fn fixed_class(rng: &mut ChaCha8Rng, states: usize, cost_range: (f64, f64)) -> BanditClass {
    BanditClass {
        arrival_rate: 0.0,
        entry_dist: vec![1.0 / states as f64; states],
        gen_passive: generator(rng, states, None, 0.1, 1.0),
        gen_active: generator(rng, states, None, 0.1, 1.0),
        cost_passive: (0..states)
            .map(|_| rng.random_range(cost_range.0..cost_range.1))
            .collect(),
        cost_active: (0..states)
            .map(|_| rng.random_range(cost_range.0..cost_range.1))
            .collect(),
    }
}

/// A dynamic-population class with positive departure rates from every state.
pub fn dynamic_class(rng: &mut ChaCha8Rng, states: usize, cost_range: (f64, f64)) -> BanditClass {
    let mut entry: Vec<f64> = (0..states).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = entry.iter().sum();
    entry.iter_mut().for_each(|p| *p /= total);
    BanditClass {
        arrival_rate: rng.random_range(0.2..2.0),
        entry_dist: entry,
        gen_passive: generator(rng, states, Some((0.05, 1.0)), 0.05, 1.0),
        gen_active: generator(rng, states, Some((0.05, 2.0)), 0.05, 1.0),
        cost_passive: (0..states)
            .map(|_| rng.random_range(cost_range.0..cost_range.1))
            .collect(),
        cost_active: (0..states)
            .map(|_| rng.random_range(cost_range.0..cost_range.1))
            .collect(),
    }
}

/// Small fixed-population instance for the exact solver: `K ≤ 2`, `J ≤ 3`, at most six
/// bandits in total, integer budget between 1 and the population size minus one.
pub fn small_fixed_instance(seed: u64) -> ModelInstance {
    let mut r = rng(seed);
    let k = r.random_range(1..=2usize);
    let classes: Vec<BanditClass> = (0..k)
        .map(|_| {
            let j = r.random_range(2..=3usize);
            fixed_class(&mut r, j, (-1.0, 1.0))
        })
        .collect();
    let per_class_max = if k == 1 { 6 } else { 3 };
    let counts: Vec<Vec<f64>> = classes
        .iter()
        .map(|c| {
            let n = r.random_range(1..=per_class_max);
            let mut row = vec![0.0; c.num_states()];
            for _ in 0..n {
                row[r.random_range(0..c.num_states())] += 1.0;
            }
            row
        })
        .collect();
    let total: f64 = counts.iter().flatten().sum();
    let alpha = if total <= 1.0 {
        1.0
    } else {
        r.random_range(1..total as u32) as f64
    };
    ModelInstance {
        alpha,
        population: Population::Fixed { counts },
        classes,
    }
}

/// Fixed or dynamic instance with positive passive costs (the setting of the structure
/// lemma), one to three classes of one to four states and a random budget.
pub fn structure_instance(seed: u64) -> ModelInstance {
    let mut r = rng(seed);
    let fixed = r.random_bool(0.5);
    let k = r.random_range(1..=3usize);
    let mut classes: Vec<BanditClass> = (0..k)
        .map(|_| {
            let j = r.random_range(1..=4usize);
            if fixed {
                fixed_class(&mut r, j, (-1.0, 1.0))
            } else {
                dynamic_class(&mut r, j, (-1.0, 1.0))
            }
        })
        .collect();
    for c in &mut classes {
        c.cost_passive.iter_mut().for_each(|v| *v = v.abs() + 0.01);
    }
    let population = if fixed {
        Population::Fixed {
            counts: classes
                .iter()
                .map(|c| {
                    (0..c.num_states())
                        .map(|_| r.random_range(0.0..2.0))
                        .collect()
                })
                .collect(),
        }
    } else {
        Population::Dynamic
    };
    ModelInstance {
        alpha: r.random_range(0.1..3.0),
        population,
        classes,
    }
}

/// Random multi-class abandonment queue; indices are not forced apart.
pub fn abandonment_instance(seed: u64) -> (Vec<AbandonmentClass>, f64) {
    let mut r = rng(seed);
    let k = r.random_range(2..=5usize);
    let classes = (0..k)
        .map(|_| AbandonmentClass {
            arrival_rate: r.random_range(0.1..2.0),
            service_rate: r.random_range(0.2..3.0),
            queue_abandonment: r.random_range(0.1..2.0),
            service_abandonment: if r.random_bool(0.5) {
                r.random_range(0.0..0.5)
            } else {
                0.0
            },
            queue_cost: r.random_range(0.0..3.0),
            service_cost: r.random_range(0.0..1.0),
            queue_abandonment_penalty: 0.0,
            service_abandonment_penalty: 0.0,
        })
        .collect();
    (classes, r.random_range(0.5..4.0))
}
