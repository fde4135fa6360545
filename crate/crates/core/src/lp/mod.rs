//! Linear programs: the dense simplex solver, the fluid relaxation and its
//! parametric breakpoint sweep.

pub mod breakpoints;
pub mod fluid;
pub mod simplex;

pub use breakpoints::{
    alpha_breakpoints, population_breakpoints, sweep_breakpoints, BreakpointTable, PatternInterval,
    SignPattern, SweepAxis,
};
pub use fluid::{
    build_fluid_lp, build_fluid_lp_perturbed, build_relaxed_lp_fixed, column, fluid_optimum,
    structured_optimum, EquilibriumPoint, StateClass,
};
pub use simplex::{solve_lp, LpProblem, LpRow, LpSolution, RowKind, VarLabel};
