//! Grid discretization of the belief MDP, policy evaluation, and policy
//! iteration.

pub mod export;
pub mod grid;
pub mod kernel;
pub mod pia;
pub mod poisson;

pub use export::{policy_csv_string, read_policy_csv, write_policy_csv, SolutionRecord};
pub use grid::{build_grid, BeliefGrid};
pub use kernel::{
    apply_kernel, build_action_kernel, build_all_kernels, policy_kernel, push_measure, ActionKernel, GridPolicy,
    SparseKernel,
};
pub use pia::{
    evaluate_grid_policy, evaluate_policy_solution, greedy_policy, grid_costs, optimality_gap, policy_improvement,
    policy_iteration, policy_iteration_with_kernels, PiaIteration, PiaOptions, PiaReport, Termination,
};
pub use poisson::{solve_poisson, solve_poisson_with, PoissonSolution, SolveMethod, SolveOptions};
