//! Belief-space maps of the controlled hidden Markov process.
//!
//! For a belief `x` (row vector over states) and sensor `a`:
//!
//! ```text
//! ζ_a(x)    = x T_a                              predictive law of the next observation
//! η_a(l, x) = x D_a(l) Q / (x D_a(l) 1)          belief after observing l, propagated one step
//! ```
//!
//! where `D_a(l) = diag(T_a[·, l])`. The belief MDP moves from `x` to
//! `η_a(l, x)` with probability `ζ_a(x)[l]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PomdpModel;

/// Predictive masses at or below this are treated as null events.
pub const NULL_EVENT_MASS: f64 = 1e-300;

/// Successor beliefs closer than this (L1) are merged in kernel enumeration.
pub const MERGE_TOLERANCE: f64 = 1e-12;

/// A point on the probability simplex over hidden states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Normalizes `probs` onto the simplex. Rejects negative, non-finite, or
    /// all-zero input.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidArgument("belief must be non-empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "belief entries must be finite and nonnegative: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidArgument("belief has zero mass".into()));
        }
        Ok(Belief(probs.into_iter().map(|p| p / sum).collect()))
    }

    pub fn uniform(m: usize) -> Self {
        Belief(vec![1.0 / m as f64; m])
    }

    pub fn vertex(m: usize, k: usize) -> Self {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        Belief(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_distance(&self, other: &Belief) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Predictive distribution of the next observation.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ObservationPredictive(Vec<f64>);

impl ObservationPredictive {
    pub fn probs(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for ObservationPredictive {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "e")]
    E,
}

impl LogBase {
    pub fn ln_scale(self) -> f64 {
        match self {
            LogBase::Two => std::f64::consts::LN_2,
            LogBase::E => 1.0,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            LogBase::Two => "bits",
            LogBase::E => "nats",
        }
    }

    pub fn log(self, x: f64) -> f64 {
        x.ln() / self.ln_scale()
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogBase::Two => write!(f, "2"),
            LogBase::E => write!(f, "e"),
        }
    }
}

impl FromStr for LogBase {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "2" => Ok(LogBase::Two),
            "e" => Ok(LogBase::E),
            other => Err(format!("log base must be 2 or e, got {other:?}")),
        }
    }
}

/// Cost over the belief simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFunction {
    /// `h(x) = −Σ x[m] log x[m]`, zero at vertices, `log M` at the centre.
    Entropy { log_base: LogBase },
    /// `1 − x·x`.
    Quadratic,
}

impl Default for CostFunction {
    fn default() -> Self {
        CostFunction::Entropy { log_base: LogBase::Two }
    }
}

impl CostFunction {
    pub fn entropy(log_base: LogBase) -> Self {
        CostFunction::Entropy { log_base }
    }

    /// Base used when reporting; quadratic cost is unitless but reports the
    /// base it was configured alongside.
    pub fn log_base(&self) -> Option<LogBase> {
        match self {
            CostFunction::Entropy { log_base } => Some(*log_base),
            CostFunction::Quadratic => None,
        }
    }

    /// Largest value the cost attains on an `m`-state simplex.
    pub fn upper_bound(&self, m: usize) -> f64 {
        match self {
            CostFunction::Entropy { log_base } => log_base.log(m as f64),
            CostFunction::Quadratic => 1.0 - 1.0 / m as f64,
        }
    }

    pub fn eval(&self, probs: &[f64]) -> f64 {
        match self {
            CostFunction::Entropy { log_base } => entropy(probs, *log_base),
            CostFunction::Quadratic => 1.0 - probs.iter().map(|p| p * p).sum::<f64>(),
        }
    }
}

/// Shannon entropy with `0·log 0 = 0`.
pub fn entropy(probs: &[f64], base: LogBase) -> f64 {
    let nats: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    // Rounding can leave −0.0 or a tiny negative at vertices.
    (nats / base.ln_scale()).max(0.0)
}

pub fn cost(belief: &Belief, cf: &CostFunction) -> f64 {
    cf.eval(belief.probs())
}

fn check_sensor(model: &PomdpModel, sensor: usize) -> Result<()> {
    if sensor >= model.num_sensors() {
        return Err(Error::SensorOutOfRange {
            sensor,
            num_sensors: model.num_sensors(),
        });
    }
    Ok(())
}

/// `ζ_a(x) = x·T_a`.
pub fn zeta(belief: &Belief, sensor: usize, model: &PomdpModel) -> Result<ObservationPredictive> {
    check_sensor(model, sensor)?;
    Ok(ObservationPredictive(zeta_raw(belief.probs(), sensor, model)))
}

pub(crate) fn zeta_raw(x: &[f64], sensor: usize, model: &PomdpModel) -> Vec<f64> {
    let t = &model.sensors[sensor].emission;
    let mut out = vec![0.0; model.num_observations()];
    for (m, &xm) in x.iter().enumerate() {
        if xm == 0.0 {
            continue;
        }
        for (l, o) in out.iter_mut().enumerate() {
            *o += xm * t[m][l];
        }
    }
    out
}

/// `η_a(l, x) = x D_a(l) Q / (x D_a(l) 1)`.
pub fn eta(belief: &Belief, sensor: usize, obs: usize, model: &PomdpModel) -> Result<Belief> {
    check_sensor(model, sensor)?;
    if obs >= model.num_observations() {
        return Err(Error::ObservationOutOfRange {
            obs,
            num_observations: model.num_observations(),
        });
    }
    eta_raw(belief.probs(), sensor, obs, model).map(Belief)
}

pub(crate) fn eta_raw(x: &[f64], sensor: usize, obs: usize, model: &PomdpModel) -> Result<Vec<f64>> {
    let t = &model.sensors[sensor].emission;
    let m = model.num_states();
    let weighted: Vec<f64> = (0..m).map(|k| x[k] * t[k][obs]).collect();
    let mass: f64 = weighted.iter().sum();
    if mass <= NULL_EVENT_MASS {
        return Err(Error::ZeroProbabilityObservation { obs, mass });
    }
    let mut out = vec![0.0; m];
    for (k, &w) in weighted.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o += w * model.q(k, j);
        }
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Successor beliefs of `x` under sensor `a` with their probabilities.
///
/// Observations with zero predictive mass are skipped; successors within
/// [`MERGE_TOLERANCE`] of an earlier one are merged into it.
pub fn transition_support(belief: &Belief, sensor: usize, model: &PomdpModel) -> Result<Vec<(Belief, f64)>> {
    check_sensor(model, sensor)?;
    Ok(support_raw(belief.probs(), sensor, model)
        .into_iter()
        .map(|(b, p)| (Belief(b), p))
        .collect())
}

pub(crate) fn support_raw(x: &[f64], sensor: usize, model: &PomdpModel) -> Vec<(Vec<f64>, f64)> {
    let rho = zeta_raw(x, sensor, model);
    let mut out: Vec<(Vec<f64>, f64)> = Vec::with_capacity(rho.len());
    for (l, &p) in rho.iter().enumerate() {
        if p <= NULL_EVENT_MASS {
            continue;
        }
        let Ok(next) = eta_raw(x, sensor, l, model) else {
            continue;
        };
        match out.iter_mut().find(|(b, _)| l1(b, &next) < MERGE_TOLERANCE) {
            Some(entry) => entry.1 += p,
            None => out.push((next, p)),
        }
    }
    out
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use proptest::prelude::*;

    fn approx(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn zeta_is_row_vector_times_emission() {
        let model = PomdpModel::new(
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            vec![vec![vec![0.8, 0.2], vec![0.4, 0.6]]],
        )
        .unwrap();
        let b = Belief::new(vec![0.3, 0.7]).unwrap();
        let rho = zeta(&b, 0, &model).unwrap();
        // 0.3·0.8 + 0.7·0.4 = 0.52
        assert!(approx(rho.probs(), &[0.52, 0.48], 1e-15));
    }

    #[test]
    fn zeta_of_uninformative_sensor_is_its_row() {
        let model = presets::uninformative_sensor(0.7);
        for p in [0.0, 0.2, 0.9] {
            let b = Belief::new(vec![p, 1.0 - p]).unwrap();
            assert!(approx(zeta(&b, 0, &model).unwrap().probs(), &[0.5, 0.5], 1e-15));
        }
    }

    #[test]
    fn zeta_at_vertex_selects_a_row() {
        let model = presets::cross_sensor(0.9);
        let rho = zeta(&Belief::vertex(2, 1), 0, &model).unwrap();
        assert_eq!(rho.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn zeta_rejects_bad_sensor() {
        let model = presets::perfect_sensor(0.9);
        assert!(matches!(
            zeta(&Belief::uniform(2), 3, &model),
            Err(Error::SensorOutOfRange { .. })
        ));
    }

    #[test]
    fn perfect_sensor_static_state_collapses_to_vertex() {
        let model = PomdpModel::new(
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]],
        )
        .unwrap();
        let b = Belief::new(vec![0.2, 0.5, 0.3]).unwrap();
        for z in 0..3 {
            assert_eq!(eta(&b, 0, z, &model).unwrap(), Belief::vertex(3, z));
        }
    }

    #[test]
    fn eta_perfect_sensor_symmetric_chain() {
        let model = presets::perfect_sensor(0.9);
        let next = eta(&Belief::uniform(2), 0, 0, &model).unwrap();
        assert!(approx(next.probs(), &[0.9, 0.1], 1e-15));
    }

    #[test]
    fn eta_of_uninformative_sensor_is_prediction() {
        let model = PomdpModel::new(
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![vec![vec![0.4, 0.6], vec![0.4, 0.6]]],
        )
        .unwrap();
        let b = Belief::new(vec![0.35, 0.65]).unwrap();
        let pred = [0.35 * 0.7 + 0.65 * 0.2, 0.35 * 0.3 + 0.65 * 0.8];
        for z in 0..2 {
            assert!(approx(eta(&b, 0, z, &model).unwrap().probs(), &pred, 1e-15));
        }
    }

    #[test]
    fn eta_on_null_event_errors() {
        let model = presets::perfect_sensor(0.9);
        let err = eta(&Belief::vertex(2, 0), 0, 1, &model).unwrap_err();
        assert!(matches!(err, Error::ZeroProbabilityObservation { obs: 1, .. }));
    }

    #[test]
    fn entropy_reference_values() {
        let bits = CostFunction::entropy(LogBase::Two);
        assert_eq!(bits.eval(&[1.0, 0.0]), 0.0);
        assert_eq!(bits.eval(&[0.5, 0.5]), 1.0);
        // Direct formula: −0.9 log2 0.9 − 0.1 log2 0.1
        let direct = -(0.9f64 * 0.9f64.log2() + 0.1 * 0.1f64.log2());
        assert!((bits.eval(&[0.9, 0.1]) - direct).abs() < 1e-15);
        assert!((bits.eval(&[0.9, 0.1]) - 0.468996).abs() < 5e-7);
        assert_eq!(CostFunction::Quadratic.eval(&[0.5, 0.5]), 0.5);
        let nats = CostFunction::entropy(LogBase::E);
        assert!((nats.eval(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn support_of_perfect_sensor_at_uniform() {
        let model = presets::perfect_sensor(0.9);
        let s = transition_support(&Belief::uniform(2), 0, &model).unwrap();
        assert_eq!(s.len(), 2);
        assert!(approx(s[0].0.probs(), &[0.9, 0.1], 1e-15) && (s[0].1 - 0.5).abs() < 1e-15);
        assert!(approx(s[1].0.probs(), &[0.1, 0.9], 1e-15) && (s[1].1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn support_of_uninformative_sensor_merges() {
        let model = presets::uninformative_sensor(0.9);
        let b = Belief::new(vec![0.3, 0.7]).unwrap();
        let s = transition_support(&b, 0, &model).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].1 - 1.0).abs() < 1e-15);
        assert!(approx(
            s[0].0.probs(),
            &[0.3 * 0.9 + 0.7 * 0.1, 0.3 * 0.1 + 0.7 * 0.9],
            1e-15
        ));
    }

    #[test]
    fn support_at_vertex_weights_by_emission_row() {
        let model = presets::cross_sensor(0.9);
        let x = Belief::vertex(2, 0);
        let s = transition_support(&x, 0, &model).unwrap();
        // Both successors are e0·Q since the state is known; they merge.
        assert_eq!(s.len(), 1);
        assert!(approx(s[0].0.probs(), &[0.9, 0.1], 1e-15));
    }

    fn simplex_point(m: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, m).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(simplex_point(cols), rows)
    }

    fn small_model() -> impl Strategy<Value = PomdpModel> {
        (2usize..=3, 2usize..=3, 1usize..=2).prop_flat_map(|(m, l, a)| {
            (stochastic(m, m), proptest::collection::vec(stochastic(m, l), a))
                .prop_map(|(q, ts)| PomdpModel::new(q, ts).unwrap())
        })
    }

    proptest! {
        #[test]
        fn total_probability_recovers_prediction(
            (model, x) in small_model().prop_flat_map(|m| {
                let n = m.num_states();
                (Just(m), simplex_point(n))
            })
        ) {
            let x = Belief::new(x).unwrap();
            let pred = crate::model::propagate(&model, x.probs());
            for a in 0..model.num_sensors() {
                let rho = zeta(&x, a, &model).unwrap();
                prop_assert!((rho.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mut mix = vec![0.0; model.num_states()];
                for l in 0..model.num_observations() {
                    if rho[l] <= NULL_EVENT_MASS { continue; }
                    let next = eta(&x, a, l, &model).unwrap();
                    prop_assert!((next.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    for (m, v) in mix.iter_mut().enumerate() { *v += rho[l] * next[m]; }
                }
                prop_assert!(approx(&mix, &pred, 1e-10));
                let support: f64 = transition_support(&x, a, &model).unwrap().iter().map(|(_, p)| p).sum();
                prop_assert!((support - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn cost_bounds_hold(x in (2usize..=4).prop_flat_map(simplex_point)) {
            let m = x.len();
            let bits = CostFunction::entropy(LogBase::Two);
            let h = bits.eval(&x);
            prop_assert!(h >= 0.0 && h <= (m as f64).log2() + 1e-12);
            let q = CostFunction::Quadratic.eval(&x);
            prop_assert!(q >= -1e-15 && q <= 1.0 - 1.0 / m as f64 + 1e-12);
        }

        #[test]
        fn entropy_is_midpoint_concave(
            (a, b) in (2usize..=4).prop_flat_map(|m| (simplex_point(m), simplex_point(m)))
        ) {
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let h = |v: &[f64]| entropy(v, LogBase::Two);
            prop_assert!(h(&mid) >= 0.5 * (h(&a) + h(&b)) - 1e-12);
        }
    }

    #[test]
    fn entropy_is_zero_only_at_vertices() {
        let bits = CostFunction::entropy(LogBase::Two);
        for k in 0..3 {
            assert_eq!(bits.eval(Belief::vertex(3, k).probs()), 0.0);
        }
        assert!(bits.eval(&[0.999, 0.001, 0.0]) > 0.0);
        assert!((bits.eval(Belief::uniform(3).probs()) - 3f64.log2()).abs() < 1e-15);
    }
}
