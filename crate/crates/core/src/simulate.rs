//! Monte Carlo simulation of the joint state / observation / belief process.
//!
//! Each trajectory draws from two independent ChaCha streams derived from its
//! seed: stream 0 drives the hidden chain and stream 1 the sensor noise. The
//! state path therefore depends only on the seed, never on the schedule,
//! which lets different policies be compared on common random numbers.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::filter::{self, Belief, CostFunction};
use crate::model::PomdpModel;
use crate::policy::PolicyFunction;

/// Batches per chain for the batch-means interval.
pub const BATCHES_PER_CHAIN: usize = 20;

const STATE_STREAM: u64 = 0;
const OBSERVATION_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Fixed(usize),
    /// Draw `s_0` from the initial belief.
    SampleFromBelief,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub action: usize,
    pub obs: usize,
    pub belief: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative sum.
    last_positive
}

fn streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut state_rng = ChaCha8Rng::seed_from_u64(seed);
    state_rng.set_stream(STATE_STREAM);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(seed);
    obs_rng.set_stream(OBSERVATION_STREAM);
    (state_rng, obs_rng)
}

fn check(model: &PomdpModel, policy: &PolicyFunction, x0: &Belief, s0: InitialState) -> Result<()> {
    if x0.len() != model.num_states() {
        return Err(Error::DimensionMismatch {
            expected: model.num_states(),
            actual: x0.len(),
        });
    }
    policy.check(model.num_states(), model.num_sensors())?;
    if let InitialState::Fixed(s) = s0 {
        if s >= model.num_states() {
            return Err(Error::InvalidArgument(format!("initial state {s} out of range")));
        }
        if x0[s] <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "initial state {s} has zero probability under the initial belief"
            )));
        }
    }
    Ok(())
}

/// Runs one chain, handing every step to `sink`.
#[allow(clippy::too_many_arguments)]
fn run_chain<F>(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    s0: InitialState,
    horizon: usize,
    seed: u64,
    cf: &CostFunction,
    mut sink: F,
) -> Result<()>
where
    F: FnMut(usize, usize, usize, &[f64], f64),
{
    let (mut state_rng, mut obs_rng) = streams(seed);
    let mut state = match s0 {
        InitialState::Fixed(s) => s,
        InitialState::SampleFromBelief => sample_index(&mut state_rng, x0.probs()),
    };
    let mut belief = x0.probs().to_vec();
    for _ in 0..horizon {
        let action = policy.select(&belief);
        let obs = sample_index(&mut obs_rng, &model.sensors[action].emission[state]);
        let cost = cf.eval(&belief);
        sink(state, action, obs, &belief, cost);
        belief = filter::eta_raw(&belief, action, obs, model)?;
        state = sample_index(&mut state_rng, &model.transition[state]);
    }
    Ok(())
}

pub fn sample_trajectory(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    s0: InitialState,
    horizon: usize,
    seed: u64,
    cf: &CostFunction,
) -> Result<TrajectoryRecord> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    check(model, policy, x0, s0)?;
    let mut steps = Vec::with_capacity(horizon);
    run_chain(
        model,
        policy,
        x0,
        s0,
        horizon,
        seed,
        cf,
        |state, action, obs, belief, cost| {
            steps.push(TrajectoryStep {
                state,
                action,
                obs,
                belief: belief.to_vec(),
                cost,
            })
        },
    )?;
    Ok(TrajectoryRecord { seed, steps })
}

/// Writes `t,state,action,obs,belief_0..belief_{M-1},cost`.
pub fn write_trajectory_csv<W: Write>(record: &TrajectoryRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = record.steps.first().map_or(0, |s| s.belief.len());
    let mut header = vec!["t".to_string(), "state".into(), "action".into(), "obs".into()];
    header.extend((0..m).map(|i| format!("belief_{i}")));
    header.push("cost".into());
    w.write_record(&header).map_err(csv_err)?;
    for (t, s) in record.steps.iter().enumerate() {
        let mut row = vec![
            t.to_string(),
            s.state.to_string(),
            s.action.to_string(),
            s.obs.to_string(),
        ];
        row.extend(s.belief.iter().map(|b| b.to_string()));
        row.push(s.cost.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageCostEstimate {
    pub mean: f64,
    /// 95% batch-means half-width.
    pub half_width: f64,
    pub burn_in: usize,
    pub total_steps: usize,
    pub chains: usize,
    pub batches: usize,
}

impl AverageCostEstimate {
    pub fn contains(&self, value: f64) -> bool {
        (self.mean - value).abs() <= self.half_width
    }
}

/// Burn-in used when none is given: a tenth of the run.
pub fn default_burn_in(total_steps: usize) -> usize {
    total_steps / 10
}

/// Pooled post-burn-in time average of the cost with a batch-means interval.
#[allow(clippy::too_many_arguments)]
pub fn estimate_average_cost(
    model: &PomdpModel,
    policy: &PolicyFunction,
    x0: &Belief,
    total_steps: usize,
    burn_in: usize,
    n_chains: usize,
    base_seed: u64,
    cf: &CostFunction,
) -> Result<AverageCostEstimate> {
    if total_steps <= burn_in {
        return Err(Error::InvalidArgument(format!(
            "total steps {total_steps} must exceed burn-in {burn_in}"
        )));
    }
    if n_chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    check(model, policy, x0, InitialState::SampleFromBelief)?;
    let kept = total_steps - burn_in;

    let per_chain: Vec<(f64, Vec<f64>)> = (0..n_chains)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k as u64);
            let mut costs = Vec::with_capacity(kept);
            let mut t = 0usize;
            run_chain(
                model,
                policy,
                x0,
                InitialState::SampleFromBelief,
                total_steps,
                seed,
                cf,
                |_, _, _, _, c| {
                    if t >= burn_in {
                        costs.push(c);
                    }
                    t += 1;
                },
            )?;
            let sum: f64 = costs.iter().sum();
            Ok((sum, batch_means(&costs, BATCHES_PER_CHAIN)))
        })
        .collect::<Result<_>>()?;

    let total_sum: f64 = per_chain.iter().map(|(s, _)| s).sum();
    let mean = total_sum / (kept * n_chains) as f64;
    let batches: Vec<f64> = per_chain.into_iter().flat_map(|(_, b)| b).collect();
    let half_width = half_width_95(&batches);
    Ok(AverageCostEstimate {
        mean,
        half_width,
        burn_in,
        total_steps,
        chains: n_chains,
        batches: batches.len(),
    })
}

/// Means of `count` equal consecutive batches; a trailing remainder shorter
/// than a batch is dropped. Short runs fall back to one-sample batches.
pub fn batch_means(values: &[f64], count: usize) -> Vec<f64> {
    let size = (values.len() / count).max(1);
    values
        .chunks_exact(size)
        .take(count)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect()
}

/// Student-t 95% half-width of the mean of `batches`.
pub fn half_width_95(batches: &[f64]) -> f64 {
    let b = batches.len();
    if b < 2 {
        return f64::INFINITY;
    }
    let mean = batches.iter().sum::<f64>() / b as f64;
    let var = batches.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b - 1) as f64;
    if var == 0.0 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (b - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    t * (var / b as f64).sqrt()
}
