//! Exact solvers: the discounted single-bandit subproblem and average-cost
//! relative value iteration on small fixed populations.

pub mod population;
pub mod single;

pub use population::{
    fixed_instance, relative_value_iteration, state_count, suboptimality_table, ActionSet, GapRow,
    PopulationMdp, RviOptions,
};
pub use single::{
    build_single_bandit, solve_discounted_exact, value_iteration_discounted, SingleBanditMdp,
    SolveResult,
};
