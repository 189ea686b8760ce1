//! Exact finite-horizon entropies by enumerating observation sequences.
//!
//! Starting from a belief `x0`, every observation path `z_0 … z_{n−1}` with
//! positive probability is expanded depth-first. The belief at depth `n`
//! is the posterior of `S_n` given the path, so averaging the cost of the
//! leaf beliefs with their path probabilities gives
//!
//! ```text
//! H(S_n | Z_0^{n−1}, π_0 = x0) = (P_w^n h)(x0)
//! ```
//!
//! [`conditional_entropy_oracle`] computes the same quantity without any
//! belief recursion, from the joint law `p(s_n, z_0^{n−1})` and the chain
//! rule, so the two serve as mutual checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::{self, entropy, Belief, CostFunction, LogBase, NULL_EVENT_MASS};
use crate::model::PomdpModel;
use crate::policy::PolicyFunction;

/// Upper bound on `L^depth` expansion nodes.
pub const MAX_TREE_NODES: f64 = 1e7;

fn guard(model: &PomdpModel, depth: usize) -> Result<()> {
    let nodes = (model.num_observations() as f64).powi(depth as i32);
    if nodes > MAX_TREE_NODES {
        return Err(Error::HorizonTooLarge {
            nodes,
            limit: MAX_TREE_NODES,
        });
    }
    Ok(())
}

fn check_inputs(model: &PomdpModel, policy: &PolicyFunction, x0: &Belief) -> Result<()> {
    if x0.len() != model.num_states() {
        return Err(Error::DimensionMismatch {
            expected: model.num_states(),
            actual: x0.len(),
        });
    }
    policy.check(model.num_states(), model.num_sensors())
}

/// Per-depth sums accumulated over one tree walk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSums {
    /// `E[c(π_t)]` for `t = 0..=depth`.
    pub cost: Vec<f64>,
    /// Total path probability at each depth.
    pub mass: Vec<f64>,
    /// `E[h(ζ_w(π_t))] = H(Z_t | Z_0^{t−1})` for `t = 0..=depth`.
    pub predictive_entropy: Vec<f64>,
}

struct Walker<'a> {
    model: &'a PomdpModel,
    policy: &'a PolicyFunction,
    cf: &'a CostFunction,
    base: LogBase,
    depth: usize,
    sums: TreeSums,
}

impl Walker<'_> {
    fn visit(&mut self, x: &[f64], prob: f64, t: usize) {
        let a = self.policy.select(x);
        let rho = filter::zeta_raw(x, a, self.model);
        self.sums.cost[t] += prob * self.cf.eval(x);
        self.sums.mass[t] += prob;
        self.sums.predictive_entropy[t] += prob * entropy(&rho, self.base);
        if t == self.depth {
            return;
        }
        for (l, &p) in rho.iter().enumerate() {
            if p <= NULL_EVENT_MASS {
                continue;
            }
            if let Ok(next) = filter::eta_raw(x, a, l, self.model) {
                self.visit(&next, prob * p, t + 1);
            }
        }
    }
}

/// Walks the observation tree to `depth`, accumulating per-depth sums.
pub fn tree_sums(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    depth: usize,
    cf: &CostFunction,
) -> Result<TreeSums> {
    check_inputs(model, policy, x0)?;
    guard(model, depth)?;
    let base = cf.log_base().unwrap_or_default();
    let mut walker = Walker {
        model,
        policy,
        cf,
        base,
        depth,
        sums: TreeSums {
            cost: vec![0.0; depth + 1],
            mass: vec![0.0; depth + 1],
            predictive_entropy: vec![0.0; depth + 1],
        },
    };
    walker.visit(x0.probs(), 1.0, 0);
    Ok(walker.sums)
}

/// `E[c(π_n) | π_0 = x0]`; for the entropy cost this is `H(S_n | Z_0^{n−1})`.
pub fn conditional_entropy_exact(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    n: usize,
    cf: &CostFunction,
) -> Result<f64> {
    Ok(tree_sums(model, policy, x0, n, cf)?.cost[n])
}

/// `H(S_n | Z_0^{n−1})` from the joint law of the hidden state and the
/// observation path, built by the unnormalized forward recursion
/// `α_{t+1}(s') = Σ_s α_t(s) T_{a_t}[s, z_t] Q[s, s']`.
pub fn conditional_entropy_oracle(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    n: usize,
    base: LogBase,
) -> Result<f64> {
    check_inputs(model, policy, x0)?;
    guard(model, n)?;
    let mut joint_entropy = 0.0;
    let mut path_entropy = 0.0;
    let mut stack: Vec<(Vec<f64>, usize)> = vec![(x0.probs().to_vec(), 0)];
    while let Some((alpha, t)) = stack.pop() {
        let path_prob: f64 = alpha.iter().sum();
        if t == n {
            for &a in &alpha {
                if a > 0.0 {
                    joint_entropy -= a * a.ln();
                }
            }
            if path_prob > 0.0 {
                path_entropy -= path_prob * path_prob.ln();
            }
            continue;
        }
        let normalized: Vec<f64> = alpha.iter().map(|a| a / path_prob).collect();
        let action = policy.select(&normalized);
        let t_a = &model.sensors[action].emission;
        #[allow(clippy::needless_range_loop)]
        for z in 0..model.num_observations() {
            let mut next = vec![0.0; model.num_states()];
            let mut mass = 0.0;
            for (s, &a) in alpha.iter().enumerate() {
                let w = a * t_a[s][z];
                if w == 0.0 {
                    continue;
                }
                mass += w;
                for (s2, nv) in next.iter_mut().enumerate() {
                    *nv += w * model.q(s, s2);
                }
            }
            // Same null-event rule as the belief recursion, on the unnormalized scale.
            if mass <= NULL_EVENT_MASS * path_prob {
                continue;
            }
            stack.push((next, t + 1));
        }
    }
    Ok(((joint_entropy - path_entropy) / base.ln_scale()).max(0.0))
}

/// Cesàro average of the conditional entropies over `t = 0..N−1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CesaroEstimate {
    pub average: f64,
    /// `E[c(π_t)]` for `t = 0..N−1`.
    pub terms: Vec<f64>,
    /// Running averages `(1/k) Σ_{t<k} terms[t]` for `k = 1..=N`.
    pub partial_averages: Vec<f64>,
}

pub fn cesaro_estimation_entropy(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    steps: usize,
    cf: &CostFunction,
) -> Result<CesaroEstimate> {
    if steps == 0 {
        return Err(Error::InvalidArgument("Cesàro average needs at least one step".into()));
    }
    let sums = tree_sums(model, policy, x0, steps - 1, cf)?;
    let terms = sums.cost;
    let partial_averages = running_averages(&terms);
    Ok(CesaroEstimate {
        average: *partial_averages.last().expect("steps ≥ 1"),
        terms,
        partial_averages,
    })
}

fn running_averages(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .enumerate()
        .map(|(k, x)| {
            acc += x;
            acc / (k + 1) as f64
        })
        .collect()
}

/// `(1/n) Σ_{i=1}^{n} H(Z_i | Z_0^{i−1})`, with each term `E[h(ζ_w(π_i))]`.
pub fn entropy_rate_exact(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    n: usize,
    base: LogBase,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("entropy rate needs n ≥ 1".into()));
    }
    let sums = tree_sums(model, policy, x0, n, &CostFunction::entropy(base))?;
    Ok(sums.predictive_entropy[1..=n].iter().sum::<f64>() / n as f64)
}
