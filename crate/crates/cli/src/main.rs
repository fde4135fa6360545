//! `restless`: command-line front end for the fluid-relaxation toolkit.
//!
//! Every subcommand loads a model (a built-in scenario or a JSON file), runs one stage of
//! the pipeline and writes its artifacts plus a `manifest.json` into `--out`. The primary
//! result is also printed to stdout in the `--format` of choice.
//!
//! Exit codes: 0 on success, 1 on domain errors (a JSON object on stderr), 2 on usage
//! errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use restless::fluid::{attractor_check, integrate, AttractorOptions};
use restless::lp::{structured_optimum, sweep_breakpoints, SweepAxis};
use restless::mdp::{
    fixed_instance, relative_value_iteration, suboptimality_table, GapRow, RviOptions,
};
use restless::model::{validate, ModelInstance};
use restless::par::Execution;
use restless::policy::{
    builtin_policy, linear_extensions, pi_star_constraints, select_policy, whittle_index_report,
    whittle_limit_with, whittle_policy, PriorityPolicy, WhittleOptions, DEFAULT_BETAS,
};
use restless::sim::{convergence_study, simulate, ConvergenceRow, SimConfig};
use restless::{round_json, scenarios, Error};

#[derive(Parser)]
#[command(
    name = "restless",
    version,
    about = "Fluid LP relaxations, priority policies and Whittle indices for restless bandits"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Directory receiving every artifact and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed for sampling and simulation.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Format of the result printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct ModelSource {
    /// Built-in scenario: nonindexable-3state, nonindexable-3state-hard or mmsm-2class.
    #[arg(long)]
    scenario: Option<String>,
    /// Model JSON file.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Override the activation budget.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Clone)]
struct PopulationArg {
    /// Rescale a fixed population to this total mass (composition kept).
    #[arg(long)]
    x0: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against every invariant.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Structured optimum of the fluid LP, optionally with a breakpoint sweep.
    Fluid {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        population: PopulationArg,
        /// Sweep the population (fixed) or the budget (dynamic) over (0, SWEEP].
        #[arg(long)]
        sweep: Option<f64>,
    },
    /// Selected policy and the optimal priority set at the model's operating point.
    Policies {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        population: PopulationArg,
        /// Upper end of the breakpoint sweep (default: twice the operating point, at least 10).
        #[arg(long)]
        sweep: Option<f64>,
        /// Maximum number of policies enumerated from the optimal priority set.
        #[arg(long, default_value_t = 64)]
        limit: usize,
    },
    /// Whittle indices per class.
    Whittle {
        #[command(flatten)]
        model: ModelArgs,
        /// Discount rates; four or more decreasing rates also give limiting indices.
        #[arg(long, value_delimiter = ',')]
        beta: Option<Vec<f64>>,
        /// Grid points of the indexability sweep.
        #[arg(long, default_value_t = 200)]
        grid: usize,
        /// Restrict to one class (1-based).
        #[arg(long)]
        class: Option<usize>,
    },
    /// Sample the fluid ODE under a policy and test convergence to the optimum.
    Attractor {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        population: PopulationArg,
        /// Policy JSON file or built-in name (selected, whittle, iota, prio…).
        #[arg(long, default_value = "selected")]
        policy: String,
        /// Number of sampled initial points.
        #[arg(long, default_value_t = 64)]
        samples: usize,
        /// Sup-norm distance counted as convergence.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Integration horizon (default: scaled to the slowest rate).
        #[arg(long)]
        horizon: Option<f64>,
        /// Integration step (default: scaled to the fastest rate).
        #[arg(long)]
        step: Option<f64>,
    },
    /// Simulate the scaled stochastic system; several scalings give a convergence table.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        population: PopulationArg,
        /// Policy JSON file or built-in name (selected, whittle, iota, prio…).
        #[arg(long, default_value = "selected")]
        policy: String,
        /// Scaling factor(s), comma separated and ascending.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        r: Vec<f64>,
        /// Simulated time on the fluid scale (default: scaled to the slowest rate).
        #[arg(long)]
        horizon: Option<f64>,
        /// Fraction of the horizon discarded before averaging.
        #[arg(long, default_value_t = 0.2)]
        burn_in: f64,
        /// Number of batches for the batch-means confidence interval.
        #[arg(long, default_value_t = 20)]
        batches: usize,
        /// Record a time series at this spacing (single scaling only).
        #[arg(long)]
        series: Option<f64>,
    },
    /// Exact optimal or policy average cost by relative value iteration.
    Exact {
        #[command(flatten)]
        model: ModelArgs,
        /// Integer bandits per class, all starting in `--start-state`.
        #[arg(long)]
        x0: Option<u32>,
        /// Starting state of every bandit (1-based).
        #[arg(long, default_value_t = 1)]
        start_state: usize,
        /// Evaluate this policy instead of optimizing.
        #[arg(long)]
        policy: Option<String>,
        /// Span tolerance of relative value iteration.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Relative sub-optimality gaps of priority policies over a range of populations.
    Gaps {
        #[command(flatten)]
        model: ModelArgs,
        /// Population sizes: `1..10` or a comma-separated list.
        #[arg(long, default_value = "1..10")]
        x0: String,
        /// Priority policies to compare, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "prio1,prio12,prio123,prio2,prio21,prio213"
        )]
        policies: Vec<String>,
        /// Starting state of every bandit (1-based).
        #[arg(long, default_value_t = 1)]
        start_state: usize,
    },
}

/// Domain failure: a crate error or an invalid model with its violations.
enum Failure {
    Domain(Error),
    InvalidModel(Value),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Domain(Error::Io(e))
    }
}

type CmdResult<T> = Result<T, Failure>;

/// Collects artifacts written under the output directory.
struct Emitter {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Emitter {
    fn new(dir: &Path) -> CmdResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn json(&mut self, name: &str, mut value: Value) -> CmdResult<Value> {
        round_json(&mut value);
        let text = serde_json::to_string_pretty(&value).map_err(Error::Json)? + "\n";
        fs::write(self.dir.join(name), text)?;
        self.artifacts.push(name.to_string());
        Ok(value)
    }

    fn text(&mut self, name: &str, text: &str) -> CmdResult<()> {
        fs::write(self.dir.join(name), text)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }
}

/// What a command prints to stdout.
struct Output {
    json: Value,
    csv: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&cli, &args) {
        Ok(out) => {
            match (cli.global.format, out.csv) {
                (Format::Csv, Some(csv)) => print!("{csv}"),
                _ => println!(
                    "{}",
                    serde_json::to_string_pretty(&out.json).unwrap_or_default()
                ),
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Domain(e)) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
        Err(Failure::InvalidModel(v)) => {
            eprintln!("{v}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli, args: &[String]) -> CmdResult<Output> {
    let mut emit = Emitter::new(&cli.global.out)?;
    let seed = cli.global.seed;
    let (name, source, out) = match &cli.command {
        Command::Validate { model } => ("validate", model, cmd_validate(model, &mut emit)?),
        Command::Fluid {
            model,
            population,
            sweep,
        } => (
            "fluid",
            model,
            cmd_fluid(model, population, *sweep, &mut emit)?,
        ),
        Command::Policies {
            model,
            population,
            sweep,
            limit,
        } => (
            "policies",
            model,
            cmd_policies(model, population, *sweep, *limit, &mut emit)?,
        ),
        Command::Whittle {
            model,
            beta,
            grid,
            class,
        } => (
            "whittle",
            model,
            cmd_whittle(model, beta.as_deref(), *grid, *class, &mut emit)?,
        ),
        Command::Attractor {
            model,
            population,
            policy,
            samples,
            tol,
            horizon,
            step,
        } => {
            let opts = AttractorOptions {
                n_samples: *samples,
                tol: *tol,
                horizon: *horizon,
                step: *step,
                seed,
                execution: Execution::default(),
            };
            (
                "attractor",
                model,
                cmd_attractor(model, population, policy, &opts, &mut emit)?,
            )
        }
        Command::Simulate {
            model,
            population,
            policy,
            r,
            horizon,
            burn_in,
            batches,
            series,
        } => {
            let cfg = SimConfig {
                r: r[0],
                horizon: *horizon,
                burn_in: *burn_in,
                batches: *batches,
                seed,
                stream: 0,
                record_every: *series,
            };
            (
                "simulate",
                model,
                cmd_simulate(model, population, policy, r, &cfg, &mut emit)?,
            )
        }
        Command::Exact {
            model,
            x0,
            start_state,
            policy,
            tol,
        } => (
            "exact",
            model,
            cmd_exact(model, *x0, *start_state, policy.as_deref(), *tol, &mut emit)?,
        ),
        Command::Gaps {
            model,
            x0,
            policies,
            start_state,
        } => (
            "gaps",
            model,
            cmd_gaps(model, x0, policies, *start_state, &mut emit)?,
        ),
    };
    let input = match (&source.source.scenario, &source.source.model) {
        (Some(id), _) => json!({ "scenario": id }),
        (None, Some(path)) => json!({ "model_file": path.display().to_string() }),
        _ => Value::Null,
    };
    let manifest = json!({
        "tool": "restless",
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "arguments": args,
        "input": input,
        "seed": seed,
        "artifacts": emit.artifacts.clone(),
    });
    emit.json("manifest.json", manifest)?;
    Ok(out)
}

fn load_model(args: &ModelArgs) -> CmdResult<ModelInstance> {
    let mut model = match (&args.source.scenario, &args.source.model) {
        (Some(id), _) => scenarios::builtin(id)?,
        (None, Some(path)) => ModelInstance::from_json_file(path)?,
        _ => return Err(Error::InvalidInput("a model or scenario is required".into()).into()),
    };
    if let Some(alpha) = args.alpha {
        model = model.with_alpha(alpha);
    }
    let report = validate(&model);
    if !report.is_valid() {
        return Err(Failure::InvalidModel(json!({
            "error": "invalid_model",
            "message": "the model violates its invariants",
            "violations": report.violations,
        })));
    }
    Ok(model)
}

fn load_model_at(args: &ModelArgs, population: &PopulationArg) -> CmdResult<ModelInstance> {
    let model = load_model(args)?;
    match population.x0 {
        Some(x0) => Ok(model.with_total_population(x0)?),
        None => Ok(model),
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> CmdResult<Value> {
    Ok(serde_json::to_value(v).map_err(Error::Json)?)
}

/// The sweep axis for a model: the population for fixed models, the budget otherwise,
/// with the model's own operating point on that axis.
fn operating_point(model: &ModelInstance) -> (SweepAxis, f64) {
    match model.class_masses() {
        Some(masses) => (SweepAxis::Population, masses.iter().sum()),
        None => (SweepAxis::Alpha, model.alpha),
    }
}

fn selected(
    model: &ModelInstance,
    sweep: Option<f64>,
) -> CmdResult<(PriorityPolicy, restless::lp::BreakpointTable)> {
    let (axis, point) = operating_point(model);
    let max = sweep.unwrap_or((2.0 * point).max(10.0));
    let base = match axis {
        SweepAxis::Population => model.with_total_population(1.0)?,
        SweepAxis::Alpha => model.clone(),
    };
    let table = sweep_breakpoints(&base, axis, max, Execution::default())?;
    Ok((select_policy(&table, point)?, table))
}

fn whittle_policy_of(model: &ModelInstance) -> CmdResult<PriorityPolicy> {
    let tables = (0..model.num_classes())
        .map(|k| whittle_limit_with(model, k, &DEFAULT_BETAS, &WhittleOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(whittle_policy(&tables)?)
}

fn resolve_policy(model: &ModelInstance, arg: &str) -> CmdResult<PriorityPolicy> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path)?;
        let policy: PriorityPolicy = serde_json::from_str(&text).map_err(Error::Json)?;
        policy.check_covers(model)?;
        return Ok(policy);
    }
    match arg {
        "selected" => Ok(selected(model, None)?.0),
        "whittle" => whittle_policy_of(model),
        other => Ok(builtin_policy(model, other)?),
    }
}

fn cmd_validate(args: &ModelArgs, emit: &mut Emitter) -> CmdResult<Output> {
    let model = load_model(args)?;
    let json = emit.json(
        "validation.json",
        json!({
            "valid": true,
            "classes": model.num_classes(),
            "states": model.num_flat_states(),
            "population": if model.is_fixed() { "fixed" } else { "dynamic" },
            "alpha": model.alpha,
        }),
    )?;
    emit.json("model.json", to_value(&model)?)?;
    Ok(Output { json, csv: None })
}

fn cmd_fluid(
    args: &ModelArgs,
    population: &PopulationArg,
    sweep: Option<f64>,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let model = load_model_at(args, population)?;
    let eq = structured_optimum(&model)?;
    let mut json = emit.json("equilibrium.json", to_value(&eq)?)?;
    let csv = eq.to_csv();
    emit.text("equilibrium.csv", &csv)?;
    if let Some(max) = sweep {
        let (axis, _) = operating_point(&model);
        let base = match axis {
            SweepAxis::Population => model.with_total_population(1.0)?,
            SweepAxis::Alpha => model.clone(),
        };
        let table = sweep_breakpoints(&base, axis, max, Execution::default())?;
        let t = emit.json("breakpoints.json", to_value(&table)?)?;
        json = json!({ "equilibrium": json, "breakpoints": t });
    }
    emit.json("model.json", to_value(&model)?)?;
    Ok(Output {
        json,
        csv: Some(csv),
    })
}

fn cmd_policies(
    args: &ModelArgs,
    population: &PopulationArg,
    sweep: Option<f64>,
    limit: usize,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let model = load_model_at(args, population)?;
    let (policy, table) = selected(&model, sweep)?;
    let eq = structured_optimum(&model)?;
    let constraints = pi_star_constraints(&eq, model.alpha);
    let members = linear_extensions(&constraints, limit);
    let json = emit.json(
        "policies.json",
        json!({
            "selected": policy,
            "selected_name": policy.name(),
            "operating_point": operating_point(&model).1,
            "pi_star": constraints,
            "members": members,
            "members_truncated": members.len() >= limit,
        }),
    )?;
    emit.json("breakpoints.json", to_value(&table)?)?;
    Ok(Output { json, csv: None })
}

fn cmd_whittle(
    args: &ModelArgs,
    betas: Option<&[f64]>,
    grid: usize,
    class: Option<usize>,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let model = load_model(args)?;
    let betas = betas.unwrap_or(&DEFAULT_BETAS).to_vec();
    let classes: Vec<usize> = match class {
        Some(k) if k >= 1 && k <= model.num_classes() => vec![k - 1],
        Some(k) => return Err(Error::InvalidInput(format!("no class {k}")).into()),
        None => (0..model.num_classes()).collect(),
    };
    let opts = WhittleOptions {
        grid_points: grid,
        ..WhittleOptions::default()
    };
    let mut discounted = Vec::new();
    let mut csv = String::from("k,j,beta,nu\n");
    for &k in &classes {
        for &b in &betas {
            let table = whittle_index_report(&model, k, b, &opts)?;
            if !table.indexable {
                // Surfaces the witness through the error's JSON form.
                return Err(Error::NotIndexable {
                    class: k + 1,
                    nu_low: table.witness.as_ref().map_or(f64::NAN, |w| w.nu_low),
                    nu_high: table.witness.as_ref().map_or(f64::NAN, |w| w.nu_high),
                    passive_low: table
                        .witness
                        .as_ref()
                        .map(|w| w.passive_low.clone())
                        .unwrap_or_default(),
                    passive_high: table
                        .witness
                        .as_ref()
                        .map(|w| w.passive_high.clone())
                        .unwrap_or_default(),
                }
                .into());
            }
            for row in table.csv_rows() {
                csv.push_str(&row);
                csv.push('\n');
            }
            discounted.push(table);
        }
    }
    let limits = if betas.len() >= 4 {
        Some(
            classes
                .iter()
                .map(|&k| whittle_limit_with(&model, k, &betas, &opts))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    let policy = match &limits {
        Some(tables) if tables.len() == model.num_classes() => Some(whittle_policy(tables)?),
        _ => None,
    };
    let json = emit.json(
        "whittle.json",
        json!({ "discounted": discounted, "limit": limits, "policy": policy }),
    )?;
    emit.text("whittle.csv", &csv)?;
    Ok(Output {
        json,
        csv: Some(csv),
    })
}

fn cmd_attractor(
    args: &ModelArgs,
    population: &PopulationArg,
    policy: &str,
    opts: &AttractorOptions,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let model = load_model_at(args, population)?;
    let p = resolve_policy(&model, policy)?;
    let eq = structured_optimum(&model)?;
    let report = attractor_check(&model, &p, &eq, opts)?;
    let json = emit.json(
        "attractor.json",
        json!({ "policy": p, "target": eq.totals(), "report": report }),
    )?;
    if let Some(worst) = report.worst() {
        let traj = integrate(&model, &p, &worst.initial, report.horizon, report.step)?;
        // Thin the trajectory to at most about 2000 rows.
        let stride = (traj.times.len() / 2000).max(1);
        let thinned = restless::fluid::Trajectory {
            times: traj.times.iter().step_by(stride).copied().collect(),
            states: traj.states.iter().step_by(stride).cloned().collect(),
        };
        emit.text("worst_trajectory.csv", &thinned.to_csv(&model))?;
    }
    Ok(Output { json, csv: None })
}

fn cmd_simulate(
    args: &ModelArgs,
    population: &PopulationArg,
    policy: &str,
    r_list: &[f64],
    cfg: &SimConfig,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let model = load_model_at(args, population)?;
    let p = resolve_policy(&model, policy)?;
    if r_list.len() == 1 {
        let res = simulate(&model, &p, cfg)?;
        let json = emit.json("simulation.json", json!({ "policy": p, "result": res }))?;
        let csv = res.series_csv(&model);
        if let Some(csv) = &csv {
            emit.text("series.csv", csv)?;
        }
        return Ok(Output { json, csv });
    }
    let rows = convergence_study(&model, &p, r_list, cfg, Execution::default())?;
    let mut csv = format!("{}\n", ConvergenceRow::csv_header());
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    let json = emit.json("convergence.json", json!({ "policy": p, "rows": rows }))?;
    emit.text("convergence.csv", &csv)?;
    Ok(Output {
        json,
        csv: Some(csv),
    })
}

fn cmd_exact(
    args: &ModelArgs,
    x0: Option<u32>,
    start_state: usize,
    policy: Option<&str>,
    tol: f64,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let mut model = load_model(args)?;
    if let Some(n) = x0 {
        model = fixed_instance(&model, n, start_state.saturating_sub(1))?;
    }
    let opts = RviOptions {
        tol,
        ..RviOptions::default()
    };
    let p = policy.map(|s| resolve_policy(&model, s)).transpose()?;
    let res = relative_value_iteration(&model, p.as_ref(), &opts)?;
    let json = emit.json(
        "exact.json",
        json!({
            "policy": p,
            "gain": res.gain,
            "iterations": res.iterations,
            "span": res.residual,
            "states": res.values.len(),
        }),
    )?;
    Ok(Output { json, csv: None })
}

fn parse_range(text: &str) -> CmdResult<Vec<u32>> {
    let bad = || Error::InvalidInput(format!("cannot read population list {text:?}"));
    if let Some((a, b)) = text.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || b < a {
            return Err(bad().into());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| bad().into())
        })
        .collect()
}

fn cmd_gaps(
    args: &ModelArgs,
    x0: &str,
    names: &[String],
    start_state: usize,
    emit: &mut Emitter,
) -> CmdResult<Output> {
    let model = load_model(args)?;
    let x0s = parse_range(x0)?;
    let policies = names
        .iter()
        .map(|n| Ok((n.clone(), resolve_policy(&model, n)?)))
        .collect::<CmdResult<Vec<_>>>()?;
    let rows = suboptimality_table(
        &model,
        &policies,
        &x0s,
        start_state.saturating_sub(1),
        &RviOptions::default(),
    )?;
    let mut csv = format!("{}\n", GapRow::csv_header());
    for row in &rows {
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    emit.text("gaps.csv", &csv)?;
    let minima: Vec<Value> = x0s
        .iter()
        .map(|&x| {
            let best = rows
                .iter()
                .filter(|r| r.x0 == x)
                .min_by(|a, b| a.gap_percent.total_cmp(&b.gap_percent))
                .map(|r| r.policy.clone());
            json!({ "x0": x, "smallest_gap": best })
        })
        .collect();
    let json = emit.json("gaps.json", json!({ "rows": rows, "row_minimum": minima }))?;
    Ok(Output {
        json,
        csv: Some(csv),
    })
}
