//! Policy iteration for the average-cost belief MDP on the grid.
//!
//! Each round evaluates the current schedule by solving its Poisson equation
//! and then picks, cell by cell,
//!
//! ```text
//! w'(x) = argmin_a [ c(x) + (P_a f)(x) ]
//! ```
//!
//! When the evaluated chain has several closed classes the choice is first
//! restricted to the actions minimizing `(P_a g)(x)`; on a unichain `g` is
//! constant and that restriction is vacuous.

use serde::Serialize;

use super::grid::BeliefGrid;
use super::kernel::{build_all_kernels, policy_kernel, ActionKernel, GridPolicy};
use super::poisson::{solve_poisson_with, PoissonSolution, SolveOptions};
use crate::error::{Error, Result};
use crate::filter::{self, CostFunction};
use crate::model::PomdpModel;

/// Objective values closer than this (relative to their magnitude) are ties.
pub const VALUE_TIE: f64 = 1e-12;
/// Gain comparisons in the multichain restriction.
pub const GAIN_TIE: f64 = 1e-10;

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Cost of every grid point.
pub fn grid_costs(grid: &BeliefGrid, cf: &CostFunction) -> Vec<f64> {
    grid.points().iter().map(|p| cf.eval(p)).collect()
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_TIE * a.abs().max(b.abs()).max(1.0)
}

/// Per-cell argmin of `c(x_i) + (P_a f)(i)`, smallest sensor on ties.
pub fn policy_improvement(f: &[f64], kernels: &[ActionKernel], cost: &[f64]) -> GridPolicy {
    improve(f, None, kernels, cost)
}

/// Improvement step used inside policy iteration: restricts to
/// gain-minimizing actions before applying [`policy_improvement`]'s rule.
pub fn policy_improvement_with_gain(solution: &PoissonSolution, kernels: &[ActionKernel], cost: &[f64]) -> GridPolicy {
    let gain = (!solution.is_unichain()).then_some(solution.gain.as_slice());
    improve(&solution.f, gain, kernels, cost)
}

fn improve(f: &[f64], gain: Option<&[f64]>, kernels: &[ActionKernel], cost: &[f64]) -> GridPolicy {
    let pf: Vec<Vec<f64>> = kernels.iter().map(|k| k.matrix.apply(f)).collect();
    let pg: Option<Vec<Vec<f64>>> = gain.map(|g| kernels.iter().map(|k| k.matrix.apply(g)).collect());
    let table = (0..cost.len())
        .map(|i| {
            let admissible = |a: usize| match &pg {
                None => true,
                Some(pg) => {
                    let best = pg.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
                    pg[a][i] <= best + GAIN_TIE
                }
            };
            let mut best: Option<(usize, f64)> = None;
            for a in (0..kernels.len()).filter(|&a| admissible(a)) {
                let value = cost[i] + pf[a][i];
                match best {
                    Some((_, b)) if value >= b || ties(value, b) => {}
                    _ => best = Some((a, value)),
                }
            }
            best.map_or(0, |(a, _)| a)
        })
        .collect();
    GridPolicy::new(table)
}

/// Largest amount by which the policy's own action misses the per-cell
/// minimum of the improvement objective (zero at an exact fixed point).
pub fn optimality_gap(policy: &GridPolicy, solution: &PoissonSolution, kernels: &[ActionKernel], cost: &[f64]) -> f64 {
    let pf: Vec<Vec<f64>> = kernels.iter().map(|k| k.matrix.apply(&solution.f)).collect();
    let pg: Vec<Vec<f64>> = kernels.iter().map(|k| k.matrix.apply(&solution.gain)).collect();
    (0..cost.len())
        .map(|i| {
            let w = policy.action(i);
            let best_gain = pg.iter().map(|v| v[i]).fold(f64::INFINITY, f64::min);
            let gain_gap = pg[w][i] - best_gain;
            let best_value = (0..kernels.len())
                .filter(|&a| pg[a][i] <= best_gain + GAIN_TIE)
                .map(|a| cost[i] + pf[a][i])
                .fold(f64::INFINITY, f64::min);
            let value_gap = cost[i] + pf[w][i] - best_value;
            gain_gap.max(value_gap).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// Picks, per cell, the sensor with the smallest expected next-step cost
/// under the exact (unprojected) belief update.
pub fn greedy_policy(model: &PomdpModel, grid: &BeliefGrid, cf: &CostFunction) -> GridPolicy {
    GridPolicy::new(
        grid.points()
            .iter()
            .map(|x| {
                let mut best: Option<(usize, f64)> = None;
                for a in 0..model.num_sensors() {
                    let expected: f64 = filter::support_raw(x, a, model)
                        .iter()
                        .map(|(next, p)| p * cf.eval(next))
                        .sum();
                    match best {
                        Some((_, b)) if expected >= b || ties(expected, b) => {}
                        _ => best = Some((a, expected)),
                    }
                }
                best.map_or(0, |(a, _)| a)
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Improvement returned the policy just evaluated.
    PolicyRepeated,
    /// Improvement could only reshuffle ties; the gain cannot move.
    GainConverged,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiaIteration {
    pub policy: GridPolicy,
    pub g: f64,
    pub f_span: f64,
    /// Cells that differ from the previous iteration's policy.
    pub cells_changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiaReport {
    pub iterations: Vec<PiaIteration>,
    pub policy: GridPolicy,
    pub solution: PoissonSolution,
    pub termination: Termination,
    /// `(1/n) P_wⁿ f → 0` holds for any bounded `f`, which every table on a
    /// finite grid is.
    pub side_condition_holds: bool,
}

impl PiaReport {
    pub fn g(&self) -> f64 {
        self.solution.g
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiaOptions {
    pub max_iters: usize,
    pub solve: SolveOptions,
}

impl Default for PiaOptions {
    fn default() -> Self {
        PiaOptions {
            max_iters: DEFAULT_MAX_ITERS,
            solve: SolveOptions::default(),
        }
    }
}

pub fn policy_iteration(
    model: &PomdpModel,
    grid: &BeliefGrid,
    init: &GridPolicy,
    max_iters: usize,
    cf: &CostFunction,
) -> Result<PiaReport> {
    let kernels = build_all_kernels(model, grid)?;
    policy_iteration_with_kernels(
        grid,
        &kernels,
        init,
        cf,
        &PiaOptions {
            max_iters,
            ..PiaOptions::default()
        },
    )
}

pub fn policy_iteration_with_kernels(
    grid: &BeliefGrid,
    kernels: &[ActionKernel],
    init: &GridPolicy,
    cf: &CostFunction,
    opts: &PiaOptions,
) -> Result<PiaReport> {
    if opts.max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    init.check(grid, kernels.len())?;
    let cost = grid_costs(grid, cf);
    let reference = grid.uniform_ordinal();

    let mut policy = init.clone();
    let mut previous: Option<GridPolicy> = None;
    let mut iterations = Vec::new();
    let mut best: Option<(GridPolicy, PoissonSolution)> = None;
    let mut termination = Termination::MaxIterations;

    for it in 0..opts.max_iters {
        let kernel = policy_kernel(kernels, &policy);
        let solution = solve_poisson_with(&kernel, &cost, reference, &opts.solve).map_err(|e| match e {
            Error::MultichainUnresolved { iterations, span, .. } => Error::MultichainUnresolved {
                iterations,
                span,
                pia_iteration: Some(it),
            },
            other => other,
        })?;
        iterations.push(PiaIteration {
            policy: policy.clone(),
            g: solution.g,
            f_span: solution.f_span(),
            cells_changed: previous.as_ref().map_or(0, |p| p.cells_changed(&policy)),
        });
        if best.as_ref().is_none_or(|(_, b)| solution.g <= b.g + VALUE_TIE) {
            best = Some((policy.clone(), solution.clone()));
        }

        let next = policy_improvement_with_gain(&solution, kernels, &cost);
        if next == policy {
            termination = Termination::PolicyRepeated;
            break;
        }
        if optimality_gap(&policy, &solution, kernels, &cost) <= VALUE_TIE {
            termination = Termination::GainConverged;
            break;
        }
        previous = Some(std::mem::replace(&mut policy, next));
    }

    let (policy, solution) = best.expect("at least one evaluation");
    Ok(PiaReport {
        iterations,
        policy,
        solution,
        termination,
        side_condition_holds: true,
    })
}

/// Full Poisson solution of a fixed grid policy.
pub fn evaluate_policy_solution(
    model: &PomdpModel,
    grid: &BeliefGrid,
    policy: &GridPolicy,
    cf: &CostFunction,
) -> Result<PoissonSolution> {
    policy.check(grid, model.num_sensors())?;
    let kernels = build_all_kernels(model, grid)?;
    let kernel = policy_kernel(&kernels, policy);
    solve_poisson_with(
        &kernel,
        &grid_costs(grid, cf),
        grid.uniform_ordinal(),
        &SolveOptions::default(),
    )
}

/// Average cost of a grid policy started from the cell nearest the uniform
/// belief.
pub fn evaluate_grid_policy(
    model: &PomdpModel,
    grid: &BeliefGrid,
    policy: &GridPolicy,
    cf: &CostFunction,
) -> Result<f64> {
    evaluate_policy_solution(model, grid, policy, cf).map(|s| s.g)
}
