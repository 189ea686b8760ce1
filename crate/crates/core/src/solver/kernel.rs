//! Finite belief kernels on the grid.
//!
//! Row `i` of the kernel for sensor `a` spreads the mass `(x_i T_a)[l]` onto
//! the grid point nearest `η_a(l, x_i)`, for every observation `l` with
//! positive predictive mass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::BeliefGrid;
use crate::error::{Error, Result};
use crate::filter;
use crate::model::PomdpModel;

/// Row-stochastic sparse matrix, rows stored as `(column, probability)`
/// sorted by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernel {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseKernel {
    /// Builds a kernel from row lists, merging duplicate columns.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let rows = rows
            .into_iter()
            .map(|mut row| {
                row.sort_by_key(|&(j, _)| j);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
                for (j, p) in row {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += p,
                        _ => merged.push((j, p)),
                    }
                }
                merged
            })
            .collect();
        SparseKernel { rows }
    }

    pub fn from_dense(dense: &[Vec<f64>]) -> Self {
        Self::from_rows(
            dense
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &p)| p != 0.0)
                        .map(|(j, &p)| (j, p))
                        .collect()
                })
                .collect(),
        )
    }

    pub fn identity(n: usize) -> Self {
        SparseKernel {
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Largest `|Σ_j P(i,j) − 1|` over rows.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `(Pf)(i) = Σ_j P(i,j) f(j)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, p)| p * f[j]).sum())
            .collect()
    }

    /// `(μP)(j) = Σ_i μ(i) P(i,j)`.
    pub fn push(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        for (row, &m) in self.rows.iter().zip(mu) {
            if m == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j] += m * p;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        self.rows
            .iter()
            .map(|row| {
                let mut d = vec![0.0; n];
                for &(j, p) in row {
                    d[j] += p;
                }
                d
            })
            .collect()
    }
}

/// Grid kernel for one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionKernel {
    pub action: usize,
    pub matrix: SparseKernel,
}

/// Stationary deterministic schedule on the grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridPolicy(Vec<usize>);

impl GridPolicy {
    pub fn new(table: Vec<usize>) -> Self {
        GridPolicy(table)
    }

    pub fn constant(len: usize, sensor: usize) -> Self {
        GridPolicy(vec![sensor; len])
    }

    /// `sensor_at_or_above` where `x[0] ≥ θ`, else `sensor_below`.
    pub fn threshold(grid: &BeliefGrid, theta: f64, sensor_at_or_above: usize, sensor_below: usize) -> Self {
        GridPolicy(
            grid.points()
                .iter()
                .map(|p| {
                    if p[0] >= theta {
                        sensor_at_or_above
                    } else {
                        sensor_below
                    }
                })
                .collect(),
        )
    }

    pub fn table(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn action(&self, ordinal: usize) -> usize {
        self.0[ordinal]
    }

    pub fn cells_changed(&self, other: &GridPolicy) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn check(&self, grid: &BeliefGrid, num_sensors: usize) -> Result<()> {
        if self.0.len() != grid.len() {
            return Err(Error::InvalidPolicy(format!(
                "policy has {} cells, grid has {}",
                self.0.len(),
                grid.len()
            )));
        }
        if let Some((i, &a)) = self.0.iter().enumerate().find(|(_, &a)| a >= num_sensors) {
            return Err(Error::InvalidPolicy(format!(
                "cell {i} selects sensor {a}, model has {num_sensors}"
            )));
        }
        Ok(())
    }
}

pub fn build_action_kernel(model: &PomdpModel, grid: &BeliefGrid, action: usize) -> Result<ActionKernel> {
    model.emission(action)?;
    if grid.num_states() != model.num_states() {
        return Err(Error::DimensionMismatch {
            expected: model.num_states(),
            actual: grid.num_states(),
        });
    }
    let rows: Vec<Vec<(usize, f64)>> = grid
        .points()
        .par_iter()
        .map(|x| {
            filter::support_raw(x, action, model)
                .into_iter()
                .map(|(next, p)| (grid.project(&next), p))
                .collect()
        })
        .collect();
    Ok(ActionKernel {
        action,
        matrix: SparseKernel::from_rows(rows),
    })
}

/// Kernels for every sensor, indexed by sensor.
pub fn build_all_kernels(model: &PomdpModel, grid: &BeliefGrid) -> Result<Vec<ActionKernel>> {
    (0..model.num_sensors())
        .map(|a| build_action_kernel(model, grid, a))
        .collect()
}

pub fn apply_kernel(kernel: &ActionKernel, f: &[f64]) -> Vec<f64> {
    kernel.matrix.apply(f)
}

pub fn push_measure(mu: &[f64], kernel: &ActionKernel) -> Vec<f64> {
    kernel.matrix.push(mu)
}

/// `P_w(i, ·) = P_{w(i)}(i, ·)`.
pub fn policy_kernel(kernels: &[ActionKernel], policy: &GridPolicy) -> SparseKernel {
    SparseKernel {
        rows: policy
            .table()
            .iter()
            .enumerate()
            .map(|(i, &a)| kernels[a].matrix.row(i).to_vec())
            .collect(),
    }
}
