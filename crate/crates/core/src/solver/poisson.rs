//! Policy evaluation: the Poisson equation of a fixed grid chain.
//!
//! ```text
//! g + f = c + P f
//! g     = P g
//! ```
//!
//! On a unichain `g` is a constant and `f` is unique up to an additive
//! constant, pinned by `f(reference) = 0`. A chain with several closed
//! classes has one gain per class; transient cells inherit the absorption
//! average `g = P g`, and `f` is pinned once per class.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::kernel::SparseKernel;
use crate::chain::{self, ChainStructure};
use crate::error::{Error, Result};

/// A solve is accepted when the max-norm Poisson defect is below this.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolveOptions {
    /// Systems with more unknowns than this use relative value iteration.
    pub direct_limit: usize,
    /// Span-seminorm stopping threshold for relative value iteration.
    pub rvi_tolerance: f64,
    pub rvi_max_iters: usize,
    /// Self-loop weight mixed into the chain during relative value iteration
    /// so that periodic chains converge; the gain is unchanged.
    pub rvi_damping: f64,
    /// Skip the direct solve entirely.
    pub force_rvi: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            direct_limit: 2000,
            rvi_tolerance: 1e-10,
            rvi_max_iters: 1_000_000,
            rvi_damping: 0.5,
            force_rvi: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Direct,
    RelativeValueIteration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoissonSolution {
    /// Average cost from the reference cell.
    pub g: f64,
    /// Average cost from every cell; constant on a unichain.
    pub gain: Vec<f64>,
    /// Relative values.
    pub f: Vec<f64>,
    pub reference: usize,
    /// `max_i |g(i) + f(i) − c(i) − (Pf)(i)|`, together with the defect of `g = Pg`.
    pub residual: f64,
    pub method: SolveMethod,
    /// True when the direct solve was rejected and relative value iteration
    /// produced the answer.
    pub fallback_used: bool,
    pub recurrent_classes: usize,
}

impl PoissonSolution {
    pub fn is_unichain(&self) -> bool {
        self.recurrent_classes == 1
    }

    /// `max f − min f`.
    pub fn f_span(&self) -> f64 {
        span(&self.f)
    }
}

fn span(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if v.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

pub fn solve_poisson(kernel: &SparseKernel, cost: &[f64], reference: usize) -> Result<PoissonSolution> {
    solve_poisson_with(kernel, cost, reference, &SolveOptions::default())
}

pub fn solve_poisson_with(
    kernel: &SparseKernel,
    cost: &[f64],
    reference: usize,
    opts: &SolveOptions,
) -> Result<PoissonSolution> {
    let n = kernel.len();
    if cost.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: cost.len(),
        });
    }
    if reference >= n {
        return Err(Error::InvalidArgument(format!(
            "reference cell {reference} outside grid of {n}"
        )));
    }
    let structure = chain::classify(n, |i| kernel.row(i).iter().filter(|(_, p)| *p > 0.0).map(|&(j, _)| j));

    let (gain, f, method, fallback_used) = if structure.is_unichain() {
        let all: Vec<usize> = (0..n).collect();
        let part = solve_unichain(kernel, cost, &all, reference, opts)?;
        (vec![part.g; n], part.f, part.method, part.fallback_used)
    } else {
        solve_multichain(kernel, cost, &structure, reference, opts)?
    };

    let pf = kernel.apply(&f);
    let pg = kernel.apply(&gain);
    let residual = (0..n)
        .map(|i| {
            let poisson = (gain[i] + f[i] - cost[i] - pf[i]).abs();
            let harmonic = (gain[i] - pg[i]).abs();
            poisson.max(harmonic)
        })
        .fold(0.0, f64::max);

    Ok(PoissonSolution {
        g: gain[reference],
        gain,
        f,
        reference,
        residual,
        method,
        fallback_used,
        recurrent_classes: structure.recurrent.len(),
    })
}

struct UnichainPart {
    g: f64,
    /// Indexed like `cells`.
    f: Vec<f64>,
    method: SolveMethod,
    fallback_used: bool,
}

/// Solves the Poisson equation on a closed set `cells` (or the whole chain)
/// that contains a single recurrent class, anchoring `f(anchor) = 0`.
fn solve_unichain(
    kernel: &SparseKernel,
    cost: &[f64],
    cells: &[usize],
    anchor: usize,
    opts: &SolveOptions,
) -> Result<UnichainPart> {
    let n = cells.len();
    let mut local = vec![usize::MAX; kernel.len()];
    for (k, &i) in cells.iter().enumerate() {
        local[i] = k;
    }
    let anchor_local = local[anchor];
    let rows: Vec<Vec<(usize, f64)>> = cells
        .iter()
        .map(|&i| kernel.row(i).iter().map(|&(j, p)| (local[j], p)).collect())
        .collect();
    let c: Vec<f64> = cells.iter().map(|&i| cost[i]).collect();

    let mut fallback_used = false;
    if !opts.force_rvi && n <= opts.direct_limit {
        if let Some((g, f)) = direct_unichain(&rows, &c, anchor_local) {
            if local_residual(&rows, &c, g, &f) < RESIDUAL_TOLERANCE {
                return Ok(UnichainPart {
                    g,
                    f,
                    method: SolveMethod::Direct,
                    fallback_used: false,
                });
            }
        }
        fallback_used = true;
    }
    let (g, f) = relative_value_iteration(&rows, &c, anchor_local, opts)?;
    Ok(UnichainPart {
        g,
        f,
        method: SolveMethod::RelativeValueIteration,
        fallback_used,
    })
}

fn local_residual(rows: &[Vec<(usize, f64)>], c: &[f64], g: f64, f: &[f64]) -> f64 {
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let pf: f64 = row.iter().map(|&(j, p)| p * f[j]).sum();
            (g + f[i] - c[i] - pf).abs()
        })
        .fold(0.0, f64::max)
}

/// Dense LU on `(I − P) f + g 1 = c` with the anchor column of `I − P`
/// replaced by the gain column.
fn direct_unichain(rows: &[Vec<(usize, f64)>], c: &[f64], anchor: usize) -> Option<(f64, Vec<f64>)> {
    let n = rows.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    for (i, row) in rows.iter().enumerate() {
        for &(j, p) in row {
            a[(i, j)] -= p;
        }
    }
    for i in 0..n {
        a[(i, anchor)] = 1.0;
    }
    let b = DVector::from_column_slice(c);
    let x = a.lu().solve(&b)?;
    if x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let g = x[anchor];
    let mut f: Vec<f64> = x.iter().copied().collect();
    f[anchor] = 0.0;
    Some((g, f))
}

/// Relative value iteration on the damped chain `τI + (1 − τ)P`.
///
/// Stops when the span of `Th − h` falls below the tolerance; returns
/// the gain and `f = (1 − τ) h` anchored at `anchor`.
pub fn relative_value_iteration(
    rows: &[Vec<(usize, f64)>],
    c: &[f64],
    anchor: usize,
    opts: &SolveOptions,
) -> Result<(f64, Vec<f64>)> {
    let n = rows.len();
    let tau = opts.rvi_damping;
    let mut h = vec![0.0; n];
    let mut th = vec![0.0; n];
    let mut last_span = f64::INFINITY;
    for _ in 0..opts.rvi_max_iters {
        for (i, row) in rows.iter().enumerate() {
            let ph: f64 = row.iter().map(|&(j, p)| p * h[j]).sum();
            th[i] = c[i] + tau * h[i] + (1.0 - tau) * ph;
        }
        let (lo, hi) = th
            .iter()
            .zip(&h)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (t, v)| {
                let d = t - v;
                (lo.min(d), hi.max(d))
            });
        last_span = hi - lo;
        let shift = th[anchor];
        for (hv, tv) in h.iter_mut().zip(&th) {
            *hv = tv - shift;
        }
        if last_span < opts.rvi_tolerance {
            let g = 0.5 * (lo + hi);
            let f = h.iter().map(|v| (1.0 - tau) * v).collect();
            return Ok((g, f));
        }
    }
    Err(Error::MultichainUnresolved {
        iterations: opts.rvi_max_iters,
        span: last_span,
        pia_iteration: None,
    })
}

type Evaluation = (Vec<f64>, Vec<f64>, SolveMethod, bool);

fn solve_multichain(
    kernel: &SparseKernel,
    cost: &[f64],
    structure: &ChainStructure,
    reference: usize,
    opts: &SolveOptions,
) -> Result<Evaluation> {
    let n = kernel.len();
    let mut gain = vec![0.0; n];
    let mut f = vec![0.0; n];
    let mut method = SolveMethod::Direct;
    let mut fallback_used = false;

    for class in &structure.recurrent {
        let anchor = if class.binary_search(&reference).is_ok() {
            reference
        } else {
            class[0]
        };
        let part = solve_unichain(kernel, cost, class, anchor, opts)?;
        for (k, &i) in class.iter().enumerate() {
            gain[i] = part.g;
            f[i] = part.f[k];
        }
        if part.method == SolveMethod::RelativeValueIteration {
            method = SolveMethod::RelativeValueIteration;
        }
        fallback_used |= part.fallback_used;
    }

    let transient = &structure.transient;
    if transient.is_empty() {
        return Ok((gain, f, method, fallback_used));
    }
    let mut local = vec![usize::MAX; n];
    for (k, &i) in transient.iter().enumerate() {
        local[i] = k;
    }
    // (I − P_TT) g_T = P_TR g_R
    let inflow = |values: &[f64]| -> Vec<f64> {
        transient
            .iter()
            .map(|&i| {
                kernel
                    .row(i)
                    .iter()
                    .filter(|&&(j, _)| local[j] == usize::MAX)
                    .map(|&(j, p)| p * values[j])
                    .sum()
            })
            .collect()
    };
    let b_gain = inflow(&gain);
    let g_t = solve_transient(kernel, transient, &local, &b_gain, opts)?;
    for (k, &i) in transient.iter().enumerate() {
        gain[i] = g_t[k];
    }
    // (I − P_TT) f_T = c_T − g_T + P_TR f_R
    let from_rec = inflow(&f);
    let b_f: Vec<f64> = transient
        .iter()
        .enumerate()
        .map(|(k, &i)| cost[i] - g_t[k] + from_rec[k])
        .collect();
    let f_t = solve_transient(kernel, transient, &local, &b_f, opts)?;
    for (k, &i) in transient.iter().enumerate() {
        f[i] = f_t[k];
    }
    Ok((gain, f, method, fallback_used))
}

/// Solves `(I − P_TT) x = b` over the transient cells.
fn solve_transient(
    kernel: &SparseKernel,
    transient: &[usize],
    local: &[usize],
    b: &[f64],
    opts: &SolveOptions,
) -> Result<Vec<f64>> {
    let t = transient.len();
    if t <= opts.direct_limit {
        let mut a = DMatrix::<f64>::identity(t, t);
        for (k, &i) in transient.iter().enumerate() {
            for &(j, p) in kernel.row(i) {
                if local[j] != usize::MAX {
                    a[(k, local[j])] -= p;
                }
            }
        }
        if let Some(x) = a.lu().solve(&DVector::from_column_slice(b)) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x.iter().copied().collect());
            }
        }
    }
    // Gauss–Seidel; converges because P_TT is strictly substochastic in the limit.
    let mut x = b.to_vec();
    let mut change = f64::INFINITY;
    for _ in 0..opts.rvi_max_iters {
        change = 0.0;
        for (k, &i) in transient.iter().enumerate() {
            let mut acc = b[k];
            let mut diag = 0.0;
            for &(j, p) in kernel.row(i) {
                if local[j] == usize::MAX {
                    continue;
                }
                if local[j] == k {
                    diag += p;
                } else {
                    acc += p * x[local[j]];
                }
            }
            let v = acc / (1.0 - diag);
            change = f64::max(change, (v - x[k]).abs());
            x[k] = v;
        }
        if change < opts.rvi_tolerance * 1e-3 {
            return Ok(x);
        }
    }
    Err(Error::MultichainUnresolved {
        iterations: opts.rvi_max_iters,
        span: change,
        pia_iteration: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: &[&[f64]]) -> SparseKernel {
        SparseKernel::from_dense(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn constant_cost_gives_gain_and_flat_f() {
        let k = dense(&[&[0.2, 0.8, 0.0], &[0.0, 0.5, 0.5], &[0.6, 0.0, 0.4]]);
        let s = solve_poisson(&k, &[0.7; 3], 1).unwrap();
        assert!((s.g - 0.7).abs() < 1e-12);
        assert!(s.f.iter().all(|v| v.abs() < 1e-12));
        assert!(s.residual < RESIDUAL_TOLERANCE);
    }

    #[test]
    fn swap_chain_by_hand() {
        // g + f0 = 0 + f1, g + f1 = 1 + f0  ⇒  g = 1/2, f1 − f0 = 1/2.
        let k = dense(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let s = solve_poisson(&k, &[0.0, 1.0], 0).unwrap();
        assert!((s.g - 0.5).abs() < 1e-12);
        assert!(s.f[0].abs() < 1e-12 && (s.f[1] - 0.5).abs() < 1e-12);
        assert_eq!(s.method, SolveMethod::Direct);
    }

    #[test]
    fn swap_chain_by_rvi_matches_direct() {
        let k = dense(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let opts = SolveOptions {
            force_rvi: true,
            ..SolveOptions::default()
        };
        let s = solve_poisson_with(&k, &[0.0, 1.0], 0, &opts).unwrap();
        assert_eq!(s.method, SolveMethod::RelativeValueIteration);
        assert!((s.g - 0.5).abs() < 1e-9);
        assert!((s.f[1] - 0.5).abs() < 1e-9);
        assert!(s.residual < RESIDUAL_TOLERANCE);
    }

    #[test]
    fn absorbing_zero_cost_cell_has_zero_gain() {
        let k = dense(&[&[0.5, 0.5, 0.0], &[0.0, 0.3, 0.7], &[0.0, 0.0, 1.0]]);
        let s = solve_poisson(&k, &[1.0, 2.0, 0.0], 0).unwrap();
        assert!(s.g.abs() < 1e-12);
        assert!(s.gain.iter().all(|g| g.abs() < 1e-12));
        assert!(s.residual < RESIDUAL_TOLERANCE);
    }

    #[test]
    fn multichain_gains_average_over_absorption() {
        // Cell 0 splits 30/70 into absorbers with costs 1 and 3.
        let k = dense(&[&[0.0, 0.3, 0.7], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let s = solve_poisson(&k, &[5.0, 1.0, 3.0], 0).unwrap();
        assert_eq!(s.recurrent_classes, 2);
        assert!((s.gain[1] - 1.0).abs() < 1e-12 && (s.gain[2] - 3.0).abs() < 1e-12);
        assert!((s.g - (0.3 + 2.1)).abs() < 1e-12);
        assert!(s.residual < RESIDUAL_TOLERANCE);
    }

    #[test]
    fn rvi_cap_reports_unresolved() {
        let k = dense(&[&[0.999, 0.001], &[0.001, 0.999]]);
        let opts = SolveOptions {
            force_rvi: true,
            rvi_max_iters: 5,
            ..SolveOptions::default()
        };
        assert!(matches!(
            solve_poisson_with(&k, &[0.0, 1.0], 0, &opts),
            Err(Error::MultichainUnresolved { iterations: 5, .. })
        ));
    }

    #[test]
    fn large_systems_take_the_iterative_route() {
        let k = dense(&[&[0.1, 0.9, 0.0], &[0.0, 0.2, 0.8], &[0.7, 0.0, 0.3]]);
        let opts = SolveOptions {
            direct_limit: 2,
            ..SolveOptions::default()
        };
        let s = solve_poisson_with(&k, &[0.0, 1.0, 2.0], 0, &opts).unwrap();
        let d = solve_poisson(&k, &[0.0, 1.0, 2.0], 0).unwrap();
        assert_eq!(s.method, SolveMethod::RelativeValueIteration);
        assert!(!s.fallback_used);
        assert!((s.g - d.g).abs() < 1e-9);
        assert!(s.f.iter().zip(&d.f).all(|(a, b)| (a - b).abs() < 1e-8));
    }
}
