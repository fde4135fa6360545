//! Fluid dynamics under a priority policy and a sampled global-attractor check.
//!
//! The state is the vector of fluid masses `x_{j,k}` in flat `(k, j)` order. A policy
//! splits it into active and passive parts by water-filling down the priority order;
//! the drift is `λ_k p_k(j) + Σ_{i,a} x^a_{i,k} q_k(j|i,a)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::EquilibriumPoint;
use crate::model::{uniformization_rate, Action, ModelInstance, Population};
use crate::par::{self, Execution};
use crate::policy::{allocate_fluid, PriorityPolicy};

/// Components this far below zero after a step are clamped to zero.
pub const CLAMP_TOL: f64 = 1e-12;
/// Any component above this aborts integration.
pub const BLOW_UP: f64 = 1e12;
/// Drift norm below which a trajectory is treated as having reached an equilibrium.
pub const STATIONARY_DRIFT: f64 = 1e-11;
const STATIONARY_CHECK_EVERY: usize = 256;

/// The policy-controlled fluid ODE with its rates laid out for fast evaluation.
#[derive(Debug, Clone)]
pub struct FluidSystem {
    order: Vec<usize>,
    alpha: f64,
    inflow: Vec<f64>,
    /// Per origin: `(destination, passive rate, active rate)` for off-diagonal moves.
    moves: Vec<Vec<(usize, f64, f64)>>,
    outflow: Vec<[f64; 2]>,
}

impl FluidSystem {
    pub fn new(model: &ModelInstance, policy: &PriorityPolicy) -> Result<Self> {
        policy.check_covers(model)?;
        let offsets = model.class_offsets();
        let mut inflow = Vec::new();
        let mut moves = Vec::new();
        let mut outflow = Vec::new();
        for (k, c) in model.classes.iter().enumerate() {
            for i in 0..c.num_states() {
                inflow.push(c.arrival_rate * c.entry_dist[i]);
                outflow.push([c.outflow(Action::Passive, i), c.outflow(Action::Active, i)]);
                let row: Vec<(usize, f64, f64)> = (0..c.num_states())
                    .filter(|&j| j != i)
                    .map(|j| {
                        (
                            offsets[k] + j,
                            c.gen_passive[i][j + 1],
                            c.gen_active[i][j + 1],
                        )
                    })
                    .filter(|(_, p, a)| *p > 0.0 || *a > 0.0)
                    .collect();
                moves.push(row);
            }
        }
        Ok(Self {
            order: policy.flat_order(model),
            alpha: model.alpha,
            inflow,
            moves,
            outflow,
        })
    }

    pub fn dim(&self) -> usize {
        self.inflow.len()
    }

    /// `x¹` under the policy.
    pub fn active(&self, x: &[f64]) -> Vec<f64> {
        allocate_fluid(&self.order, x, self.alpha)
    }

    /// Drift at `x`, written into `dx`.
    pub fn rhs_into(&self, x: &[f64], dx: &mut [f64]) {
        let active = self.active(x);
        dx.copy_from_slice(&self.inflow);
        for i in 0..x.len() {
            let a = active[i];
            let p = x[i] - a;
            dx[i] -= p * self.outflow[i][0] + a * self.outflow[i][1];
            for &(j, rp, ra) in &self.moves[i] {
                dx[j] += p * rp + a * ra;
            }
        }
    }

    pub fn rhs(&self, x: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; x.len()];
        self.rhs_into(x, &mut dx);
        dx
    }

    fn rk4_step(&self, x: &mut [f64], h: f64, work: &mut [Vec<f64>; 5]) {
        let [k1, k2, k3, k4, tmp] = work;
        self.rhs_into(x, k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.rhs_into(tmp, k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.rhs_into(tmp, k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + h * k3[i];
        }
        self.rhs_into(tmp, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if x[i] < 0.0 && x[i] >= -CLAMP_TOL {
                x[i] = 0.0;
            }
        }
    }

    /// Integrate from `x0` to `horizon` with step `step`, calling `observe(t, x)` after every
    /// step. With `stop_when_stationary`, integration ends early once the drift vanishes.
    /// Returns the terminal state and time.
    pub fn run(
        &self,
        x0: &[f64],
        horizon: f64,
        step: f64,
        stop_when_stationary: bool,
        mut observe: impl FnMut(f64, &[f64]),
    ) -> Result<(Vec<f64>, f64)> {
        if !(horizon > 0.0) || !(step > 0.0) {
            return Err(Error::InvalidInput(
                "horizon and step must be positive".into(),
            ));
        }
        let mut x = x0.to_vec();
        let n = x.len();
        let mut work = [
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
        ];
        let steps = (horizon / step).ceil() as usize;
        let mut t = 0.0;
        for s in 1..=steps {
            let h = step.min(horizon - t);
            self.rk4_step(&mut x, h, &mut work);
            t = if s == steps { horizon } else { s as f64 * step };
            if x.iter().any(|v| *v > BLOW_UP || !v.is_finite()) {
                return Err(Error::Diverged { time: t });
            }
            observe(t, &x);
            if stop_when_stationary && s % STATIONARY_CHECK_EVERY == 0 {
                self.rhs_into(&x, &mut work[0]);
                let drift = work[0].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                if drift <= STATIONARY_DRIFT {
                    break;
                }
            }
        }
        Ok((x, t))
    }
}

/// Split `x` into `(x¹, x⁰)` under `policy`.
pub fn fluid_allocation(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    x: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let active = allocate_fluid(&policy.flat_order(model), x, model.alpha);
    let passive = x.iter().zip(&active).map(|(v, a)| v - a).collect();
    (active, passive)
}

pub fn fluid_rhs(model: &ModelInstance, policy: &PriorityPolicy, x: &[f64]) -> Result<Vec<f64>> {
    Ok(FluidSystem::new(model, policy)?.rhs(x))
}

/// Sampled trajectory: `times[i]` and `states[i]`, starting with `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn terminal(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// CSV with column `t` followed by one column per state in `(k, j)` order.
    pub fn to_csv(&self, model: &ModelInstance) -> String {
        let mut out = String::from("t");
        for s in model.state_ids() {
            out.push_str(&format!(",x_{}_{}", s.class + 1, s.state + 1));
        }
        out.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            out.push_str(&crate::fmt_num(*t));
            for v in x {
                out.push(',');
                out.push_str(&crate::fmt_num(*v));
            }
            out.push('\n');
        }
        out
    }
}

/// Fixed-step RK4 from `x0` over `[0, horizon]`, recording every step.
pub fn integrate(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    x0: &[f64],
    horizon: f64,
    step: f64,
) -> Result<Trajectory> {
    let sys = FluidSystem::new(model, policy)?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
    };
    sys.run(x0, horizon, step, false, |t, x| {
        traj.times.push(t);
        traj.states.push(x.to_vec());
    })?;
    Ok(traj)
}

/// Default step `0.01/q̄`.
pub fn default_step(model: &ModelInstance) -> f64 {
    let q = uniformization_rate(model);
    if q > 0.0 {
        0.01 / q
    } else {
        0.01
    }
}

/// Default horizon `200 / (smallest positive rate)`, counting arrival rates as well.
pub fn default_horizon(model: &ModelInstance) -> f64 {
    let min_rate = model
        .classes
        .iter()
        .flat_map(|c| {
            c.gen_passive
                .iter()
                .chain(&c.gen_active)
                .enumerate()
                .flat_map(|(row, r)| {
                    let i = row % c.num_states();
                    r.iter()
                        .enumerate()
                        .filter(move |(col, _)| *col != i + 1)
                        .map(|(_, v)| *v)
                })
                .chain(std::iter::once(c.arrival_rate))
                .collect::<Vec<_>>()
        })
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if min_rate.is_finite() {
        200.0 / min_rate
    } else {
        200.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttractorOptions {
    pub n_samples: usize,
    pub tol: f64,
    /// Defaults to [`default_horizon`].
    pub horizon: Option<f64>,
    /// Defaults to [`default_step`].
    pub step: Option<f64>,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        Self {
            n_samples: 64,
            tol: 1e-4,
            horizon: None,
            step: None,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub initial: Vec<f64>,
    pub terminal: Vec<f64>,
    pub distance: f64,
    /// Time at which integration stopped (earlier than the horizon once stationary).
    pub time: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// Every sampled trajectory converged; evidence, not a proof.
    #[serde(rename = "pass (sampled)")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttractorReport {
    pub converged_count: usize,
    pub total_samples: usize,
    pub max_terminal_distance: f64,
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub verdict: Verdict,
    pub samples: Vec<SampleOutcome>,
}

impl AttractorReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// The sample ending farthest from the target.
    pub fn worst(&self) -> Option<&SampleOutcome> {
        self.samples
            .iter()
            .max_by(|a, b| a.distance.total_cmp(&b.distance))
    }
}

/// Initial points: `n_samples` random draws (uniform on each class's mass simplex for fixed
/// populations, uniform on the box `[0, 3x* + 1]` for dynamic ones) followed by deterministic
/// corners (all mass in one state per class; or `0` and `2x*`).
pub fn initial_points(
    model: &ModelInstance,
    target: &[f64],
    n_samples: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let offsets = model.class_offsets();
    let draw = |i: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        match &model.population {
            Population::Fixed { counts } => {
                let mut x = vec![0.0; target.len()];
                for (k, row) in counts.iter().enumerate() {
                    let mass: f64 = row.iter().sum();
                    let e: Vec<f64> = (0..row.len()).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                    let total: f64 = e.iter().sum();
                    for (j, v) in e.iter().enumerate() {
                        x[offsets[k] + j] = mass * v / total;
                    }
                }
                x
            }
            Population::Dynamic => target
                .iter()
                .map(|t| rng.random::<f64>() * (3.0 * t + 1.0))
                .collect(),
        }
    };
    let mut points: Vec<Vec<f64>> = (0..n_samples).map(draw).collect();
    match &model.population {
        Population::Fixed { counts } => {
            let widest = counts.iter().map(Vec::len).max().unwrap_or(0);
            for j in 0..widest {
                let mut x = vec![0.0; target.len()];
                for (k, row) in counts.iter().enumerate() {
                    x[offsets[k] + j.min(row.len() - 1)] = row.iter().sum();
                }
                points.push(x);
            }
        }
        Population::Dynamic => {
            points.push(vec![0.0; target.len()]);
            points.push(target.iter().map(|t| 2.0 * t).collect());
        }
    }
    points
}

/// Integrate sampled initial points under `policy` and compare terminal states with `x*`
/// in the sup norm. Samples run concurrently; each has its own random stream.
pub fn attractor_check(
    model: &ModelInstance,
    policy: &PriorityPolicy,
    x_star: &EquilibriumPoint,
    opts: &AttractorOptions,
) -> Result<AttractorReport> {
    if opts.n_samples == 0 {
        return Err(Error::InvalidInput(
            "at least one sample is required".into(),
        ));
    }
    let sys = FluidSystem::new(model, policy)?;
    let target = x_star.totals();
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(model));
    let step = opts.step.unwrap_or_else(|| default_step(model));
    let points = initial_points(model, &target, opts.n_samples, opts.seed);
    let samples = par::map_indexed(&points, opts.execution, |_, x0| -> Result<SampleOutcome> {
        let (terminal, time) = sys.run(x0, horizon, step, true, |_, _| {})?;
        let distance = terminal
            .iter()
            .zip(&target)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        Ok(SampleOutcome {
            initial: x0.clone(),
            terminal,
            distance,
            time,
            converged: distance <= opts.tol,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let converged_count = samples.iter().filter(|s| s.converged).count();
    let total_samples = samples.len();
    Ok(AttractorReport {
        converged_count,
        total_samples,
        max_terminal_distance: samples.iter().fold(0.0, |m, s| m.max(s.distance)),
        horizon,
        step,
        seed: opts.seed,
        verdict: if converged_count == total_samples {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        samples,
    })
}
