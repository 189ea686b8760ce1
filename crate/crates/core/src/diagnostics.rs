//! Ergodicity diagnostics for a scheduled belief chain.
//!
//! * A weighted drift test: for a weight `u ≥ 1`, a unique invariant measure
//!   is guaranteed when
//!
//!   ```text
//!   Σ_z u(η_w(z, x)) ζ_w(x)[z] < u(x)   for every belief x.
//!   ```
//!
//!   The check evaluates the ratio of the two sides at finitely many points,
//!   so a clean result is evidence only.
//! * Power iteration for the invariant measure of the grid chain, and the
//!   comparison of the Poisson gain with `Σ μ(i) c(x_i)`.
//! * Positivity of `Q` and the emission matrices.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain;
use crate::error::{Error, Result};
use crate::filter::{self, entropy, LogBase, NULL_EVENT_MASS};
use crate::model::PomdpModel;
use crate::policy::PolicyFunction;
use crate::solver::{
    build_all_kernels, grid_costs, policy_kernel, solve_poisson, BeliefGrid, GridPolicy, SparseKernel,
};

pub const DEFAULT_RANDOM_POINTS: usize = 1000;

const INVARIANT_TOLERANCE: f64 = 1e-12;
const INVARIANT_MAX_ITERS: usize = 1_000_000;

/// Weight `u : simplex → [1, ∞)`.
#[derive(Debug, Clone)]
pub enum WeightFunction {
    /// `u(x) = 1 + θ · h₂(x)`.
    Entropy { theta: f64 },
    /// Grid table, read at the nearest cell.
    Table { grid: Arc<BeliefGrid>, values: Vec<f64> },
}

impl WeightFunction {
    pub fn entropy(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight parameter must be ≥ 0, got {theta}"
            )));
        }
        Ok(WeightFunction::Entropy { theta })
    }

    pub fn table(grid: Arc<BeliefGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| v.is_nan() || **v < 1.0) {
            return Err(Error::InvalidArgument(format!("weights must be ≥ 1, found {v}")));
        }
        Ok(WeightFunction::Table { grid, values })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            WeightFunction::Entropy { theta } => 1.0 + theta * entropy(x, LogBase::Two),
            WeightFunction::Table { grid, values } => values[grid.project(x)],
        }
    }

    fn label(&self) -> String {
        match self {
            WeightFunction::Entropy { theta } => format!("1 + {theta}·h2"),
            WeightFunction::Table { .. } => "user table".into(),
        }
    }

    fn theta(&self) -> Option<f64> {
        match self {
            WeightFunction::Entropy { theta } => Some(*theta),
            WeightFunction::Table { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub weight: String,
    pub theta: Option<f64>,
    pub worst_ratio: f64,
    pub worst_point: Vec<f64>,
    pub points_checked: usize,
    /// True iff every sampled ratio is below one.
    pub no_violation_found: bool,
    pub verdict: String,
}

/// Drift ratio `Σ_z u(η_w(z,x)) ζ_w(x)[z] / u(x)` at one belief, using the
/// exact maps.
pub fn contraction_ratio(model: &PomdpModel, policy: &PolicyFunction, weight: &WeightFunction, x: &[f64]) -> f64 {
    let a = policy.select(x);
    let rho = filter::zeta_raw(x, a, model);
    let mut numerator = 0.0;
    let mut mass = 0.0;
    for (z, &p) in rho.iter().enumerate() {
        if p <= NULL_EVENT_MASS {
            continue;
        }
        if let Ok(next) = filter::eta_raw(x, a, z, model) {
            numerator += p * weight.eval(&next);
            mass += p;
        }
    }
    // Dividing by the summed predictive mass keeps u ≡ 1 at exactly one.
    numerator / (weight.eval(x) * mass)
}

/// Evaluates the drift ratio on every point of `grid` plus `random_points`
/// Dirichlet(1, …, 1) samples drawn from `seed`.
pub fn check_contraction(
    model: &PomdpModel,
    policy: &PolicyFunction,
    weight: &WeightFunction,
    grid: &BeliefGrid,
    random_points: usize,
    seed: u64,
) -> Result<ContractionReport> {
    policy.check(model.num_states(), model.num_sensors())?;
    let m = model.num_states();
    let mut points: Vec<Vec<f64>> = grid.points().to_vec();
    if random_points > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if m == 1 {
            points.extend(std::iter::repeat_n(vec![1.0], random_points));
        } else {
            // Dirichlet(1, …, 1) as normalized unit exponentials.
            points.extend((0..random_points).map(|_| {
                let e: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect::<Vec<f64>>()
            }));
        }
    }
    let ratios: Vec<f64> = points
        .par_iter()
        .map(|x| contraction_ratio(model, policy, weight, x))
        .collect();
    let (worst_idx, worst_ratio) =
        ratios.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (i, r)| if r > best.1 { (i, r) } else { best },
        );
    let no_violation_found = worst_ratio < 1.0;
    let verdict = if no_violation_found {
        format!("no violation found among {} points", points.len())
    } else {
        format!("violated at x = {:?} (ratio {worst_ratio})", points[worst_idx])
    };
    Ok(ContractionReport {
        weight: weight.label(),
        theta: weight.theta(),
        worst_ratio,
        worst_point: points[worst_idx].clone(),
        points_checked: points.len(),
        no_violation_found,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantMeasureEstimate {
    pub distribution: Vec<f64>,
    pub converged: bool,
    /// Total-variation distance between the last two iterates.
    pub tv_gap: f64,
    pub iterations: usize,
    pub recurrent_classes: usize,
    /// False when the chain has several closed classes; the estimate is then
    /// the limit from the uniform start only.
    pub unique: bool,
}

/// Damped power iteration `μ ← (μ + μP) / 2` from the uniform distribution.
///
/// Averaging consecutive iterates removes the oscillation of periodic
/// chains without moving the fixed point.
pub fn estimate_invariant_measure(kernel: &SparseKernel) -> InvariantMeasureEstimate {
    let n = kernel.len();
    estimate_invariant_measure_from(kernel, vec![1.0 / n as f64; n])
}

/// Same iteration from an explicit start. On a chain with several closed
/// classes the limit depends on `start`.
pub fn estimate_invariant_measure_from(kernel: &SparseKernel, start: Vec<f64>) -> InvariantMeasureEstimate {
    let n = kernel.len();
    let structure = chain::classify(n, |i| kernel.row(i).iter().filter(|(_, p)| *p > 0.0).map(|&(j, _)| j));
    let mut mu = start;
    let mut tv_gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < INVARIANT_MAX_ITERS {
        let pushed = kernel.push(&mu);
        let next: Vec<f64> = mu.iter().zip(&pushed).map(|(a, b)| 0.5 * (a + b)).collect();
        tv_gap = 0.5 * mu.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>();
        mu = next;
        iterations += 1;
        if tv_gap < INVARIANT_TOLERANCE {
            converged = true;
            break;
        }
    }
    let sum: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= sum);
    InvariantMeasureEstimate {
        distribution: mu,
        converged,
        tv_gap,
        iterations,
        recurrent_classes: structure.recurrent.len(),
        unique: structure.is_unichain(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErgodicCheck {
    pub g_poisson: f64,
    pub integral_mu_c: f64,
    pub gap: f64,
    pub measure_converged: bool,
    pub unique: bool,
    pub poisson_residual: f64,
}

/// Compares the Poisson gain with the integral of the cost against the
/// invariant measure of the same grid chain.
pub fn check_theorem2(
    model: &PomdpModel,
    grid: &BeliefGrid,
    policy: &GridPolicy,
    cf: &filter::CostFunction,
) -> Result<ErgodicCheck> {
    policy.check(grid, model.num_sensors())?;
    let kernels = build_all_kernels(model, grid)?;
    let kernel = policy_kernel(&kernels, policy);
    let cost = grid_costs(grid, cf);
    ergodic_check_on_kernel(&kernel, &cost, grid.uniform_ordinal())
}

/// Same comparison on an explicit kernel and cost table. The measure is the
/// limit from the reference cell, which is the one its gain describes when
/// the chain has several closed classes.
pub fn ergodic_check_on_kernel(kernel: &SparseKernel, cost: &[f64], reference: usize) -> Result<ErgodicCheck> {
    let solution = solve_poisson(kernel, cost, reference)?;
    let mut start = vec![0.0; kernel.len()];
    start[reference] = 1.0;
    let measure = estimate_invariant_measure_from(kernel, start);
    let integral_mu_c: f64 = measure.distribution.iter().zip(cost).map(|(m, c)| m * c).sum();
    Ok(ErgodicCheck {
        g_poisson: solution.g,
        integral_mu_c,
        gap: (solution.g - integral_mu_c).abs(),
        measure_converged: measure.converged,
        unique: measure.unique,
        poisson_residual: solution.residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub q_primitive: bool,
    /// Smallest `k` with `Q^k > 0` entrywise, if one exists within the
    /// Wielandt bound `M² − 2M + 2`.
    pub primitive_power: Option<usize>,
    pub sensors_strictly_positive: Vec<bool>,
}

pub fn model_positivity_report(model: &PomdpModel) -> PositivityReport {
    let m = model.num_states();
    let bound = if m <= 1 { 1 } else { m * m - 2 * m + 2 };
    let base: Vec<Vec<bool>> = model
        .transition
        .iter()
        .map(|row| row.iter().map(|&p| p > 0.0).collect())
        .collect();
    let mut power = base.clone();
    let mut primitive_power = None;
    for k in 1..=bound {
        if power.iter().all(|row| row.iter().all(|&b| b)) {
            primitive_power = Some(k);
            break;
        }
        power = (0..m)
            .map(|i| (0..m).map(|j| (0..m).any(|l| power[i][l] && base[l][j])).collect())
            .collect();
    }
    PositivityReport {
        q_primitive: primitive_power.is_some(),
        primitive_power,
        sensors_strictly_positive: model
            .sensors
            .iter()
            .map(|s| s.emission.iter().all(|row| row.iter().all(|&p| p > 0.0)))
            .collect(),
    }
}
