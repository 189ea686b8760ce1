//! Problem instances: an autonomous hidden Markov chain observed through one
//! of several sensors.
//!
//! A model is a row-stochastic `M×M` transition matrix `Q` together with a
//! bank of `A` row-stochastic `M×L` emission matrices `T_a`. At every step
//! exactly one sensor is read.
//!
//! Model files are JSON:
//!
//! ```text
//! {
//!   "states": ["s0", "s1"],
//!   "observations": ["z0", "z1"],
//!   "transition": [[0.9, 0.1], [0.1, 0.9]],
//!   "sensors": [{"name": "perfect", "emission": [[1, 0], [0, 1]]}]
//! }
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain;
use crate::error::{Error, Result};

/// Row sums may deviate from one by at most this much on input.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-9;

const STATIONARY_TOLERANCE: f64 = 1e-12;
const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// One sensor: a label and its `M×L` emission matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub name: String,
    pub emission: Vec<Vec<f64>>,
}

/// The POMDP observability instance.
///
/// Fields are public so that arbitrary (possibly invalid) instances can be
/// inspected with [`validate_model`]. Use [`PomdpModel::new`] or
/// [`load_model`] to obtain a checked and exactly-normalized model; the rest
/// of the crate assumes one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpModel {
    #[serde(rename = "states", default)]
    pub state_labels: Vec<String>,
    #[serde(rename = "observations", default)]
    pub observation_labels: Vec<String>,
    pub transition: Vec<Vec<f64>>,
    pub sensors: Vec<Sensor>,
}

impl PomdpModel {
    /// Builds a model from bare matrices with generated labels, validating it
    /// and renormalizing every row exactly.
    pub fn new(transition: Vec<Vec<f64>>, emissions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let m = transition.len();
        let l = emissions.first().and_then(|t| t.first()).map_or(0, |row| row.len());
        let model = PomdpModel {
            state_labels: (0..m).map(|i| format!("s{i}")).collect(),
            observation_labels: (0..l).map(|i| format!("z{i}")).collect(),
            transition,
            sensors: emissions
                .into_iter()
                .enumerate()
                .map(|(a, emission)| Sensor {
                    name: format!("sensor{a}"),
                    emission,
                })
                .collect(),
        };
        model.into_checked()
    }

    /// Validates, fills in missing labels, and divides every row by its sum.
    pub fn into_checked(mut self) -> Result<Self> {
        let report = validate_model(&self);
        if !report.is_clean() {
            return Err(Error::InvalidModel(report.to_string()));
        }
        let m = self.transition.len();
        let l = self.sensors[0].emission[0].len();
        if self.state_labels.is_empty() {
            self.state_labels = (0..m).map(|i| format!("s{i}")).collect();
        }
        if self.observation_labels.is_empty() {
            self.observation_labels = (0..l).map(|i| format!("z{i}")).collect();
        }
        normalize_rows(&mut self.transition);
        for sensor in &mut self.sensors {
            normalize_rows(&mut sensor.emission);
        }
        Ok(self)
    }

    pub fn num_states(&self) -> usize {
        self.transition.len()
    }

    pub fn num_observations(&self) -> usize {
        self.sensors[0].emission[0].len()
    }

    pub fn num_sensors(&self) -> usize {
        self.sensors.len()
    }

    /// `Q[i][j]`.
    #[inline]
    pub fn q(&self, i: usize, j: usize) -> f64 {
        self.transition[i][j]
    }

    /// Emission matrix of sensor `a`.
    pub fn emission(&self, a: usize) -> Result<&[Vec<f64>]> {
        self.sensors
            .get(a)
            .map(|s| s.emission.as_slice())
            .ok_or(Error::SensorOutOfRange {
                sensor: a,
                num_sensors: self.sensors.len(),
            })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

fn normalize_rows(rows: &mut [Vec<f64>]) {
    for row in rows {
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Parses a model document without validating it.
pub fn parse_model(json: &str) -> Result<PomdpModel> {
    Ok(serde_json::from_str(json)?)
}

/// Reads, validates, and normalizes a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<PomdpModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)?.into_checked()
}

/// Which matrix a violation refers to.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRef {
    Transition,
    Sensor(usize),
    Labels,
}

impl fmt::Display for MatrixRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixRef::Transition => write!(f, "transition"),
            MatrixRef::Sensor(a) => write!(f, "sensor {a}"),
            MatrixRef::Labels => write!(f, "labels"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    /// Row sum deviates from one by more than the tolerance.
    RowSum {
        sum: f64,
        deviation: f64,
    },
    NegativeProbability {
        column: usize,
        value: f64,
    },
    ProbabilityAboveOne {
        column: usize,
        value: f64,
    },
    NotFinite {
        column: usize,
    },
    /// Row or matrix has the wrong length.
    Shape {
        expected: usize,
        actual: usize,
    },
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub matrix: MatrixRef,
    pub row: Option<usize>,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let row = match self.row {
            Some(r) => format!("{} row {r}", self.matrix),
            None => self.matrix.to_string(),
        };
        match &self.kind {
            ViolationKind::RowSum { sum, deviation } => {
                write!(f, "{row} sums to {sum} (deviation {deviation:.3e})")
            }
            ViolationKind::NegativeProbability { column, value } => {
                write!(f, "{row} column {column}: negative probability {value}")
            }
            ViolationKind::ProbabilityAboveOne { column, value } => {
                write!(f, "{row} column {column}: probability {value} exceeds 1")
            }
            ViolationKind::NotFinite { column } => {
                write!(f, "{row} column {column}: non-finite entry")
            }
            ViolationKind::Shape { expected, actual } => {
                write!(f, "{row}: expected length {expected}, found {actual}")
            }
            ViolationKind::Empty => write!(f, "{row} is empty"),
        }
    }
}

/// Result of [`validate_model`]; clean iff no violations.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_clean() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural and stochastic invariant of a model.
pub fn validate_model(model: &PomdpModel) -> ValidationReport {
    let mut violations = Vec::new();
    let m = model.transition.len();
    if m == 0 {
        violations.push(Violation {
            matrix: MatrixRef::Transition,
            row: None,
            kind: ViolationKind::Empty,
        });
    }
    check_matrix(&model.transition, m, MatrixRef::Transition, &mut violations);

    if model.sensors.is_empty() {
        violations.push(Violation {
            matrix: MatrixRef::Sensor(0),
            row: None,
            kind: ViolationKind::Empty,
        });
    }
    let l = model
        .sensors
        .first()
        .and_then(|s| s.emission.first())
        .map_or(0, |r| r.len());
    if !model.sensors.is_empty() && l == 0 {
        violations.push(Violation {
            matrix: MatrixRef::Sensor(0),
            row: Some(0),
            kind: ViolationKind::Empty,
        });
    }
    for (a, sensor) in model.sensors.iter().enumerate() {
        if sensor.emission.len() != m {
            violations.push(Violation {
                matrix: MatrixRef::Sensor(a),
                row: None,
                kind: ViolationKind::Shape {
                    expected: m,
                    actual: sensor.emission.len(),
                },
            });
        }
        check_matrix(&sensor.emission, l, MatrixRef::Sensor(a), &mut violations);
    }

    if !model.state_labels.is_empty() && model.state_labels.len() != m {
        violations.push(Violation {
            matrix: MatrixRef::Labels,
            row: None,
            kind: ViolationKind::Shape {
                expected: m,
                actual: model.state_labels.len(),
            },
        });
    }
    if !model.observation_labels.is_empty() && model.observation_labels.len() != l {
        violations.push(Violation {
            matrix: MatrixRef::Labels,
            row: None,
            kind: ViolationKind::Shape {
                expected: l,
                actual: model.observation_labels.len(),
            },
        });
    }
    ValidationReport { violations }
}

fn check_matrix(rows: &[Vec<f64>], width: usize, which: MatrixRef, out: &mut Vec<Violation>) {
    for (r, row) in rows.iter().enumerate() {
        if row.len() != width {
            out.push(Violation {
                matrix: which.clone(),
                row: Some(r),
                kind: ViolationKind::Shape {
                    expected: width,
                    actual: row.len(),
                },
            });
            continue;
        }
        let mut finite = true;
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                finite = false;
                out.push(Violation {
                    matrix: which.clone(),
                    row: Some(r),
                    kind: ViolationKind::NotFinite { column: c },
                });
            } else if v < 0.0 {
                out.push(Violation {
                    matrix: which.clone(),
                    row: Some(r),
                    kind: ViolationKind::NegativeProbability { column: c, value: v },
                });
            } else if v > 1.0 {
                out.push(Violation {
                    matrix: which.clone(),
                    row: Some(r),
                    kind: ViolationKind::ProbabilityAboveOne { column: c, value: v },
                });
            }
        }
        if finite && width > 0 {
            let sum: f64 = row.iter().sum();
            let deviation = (sum - 1.0).abs();
            if deviation > STOCHASTIC_TOLERANCE {
                out.push(Violation {
                    matrix: which.clone(),
                    row: Some(r),
                    kind: ViolationKind::RowSum { sum, deviation },
                });
            }
        }
    }
}

/// Fixed point of `d ↦ d·Q`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    pub probs: Vec<f64>,
    pub iterations: usize,
    /// False when `Q` has more than one closed class, in which case `probs`
    /// is only the limit reached from the uniform start.
    pub unique: bool,
}

/// Power iteration from the uniform distribution.
///
/// Converges when successive iterates differ by less than 1e-12 in L1. A
/// periodic `Q` that never settles yields [`Error::NonConvergence`] with the
/// last iterate attached.
pub fn stationary_distribution(model: &PomdpModel) -> Result<StationaryDistribution> {
    let m = model.num_states();
    let structure = chain::classify(m, |i| (0..m).filter(move |&j| model.transition[i][j] > 0.0));
    let mut d = vec![1.0 / m as f64; m];
    let mut next = vec![0.0; m];
    let mut gap = f64::INFINITY;
    for it in 0..STATIONARY_MAX_ITERS {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &di) in d.iter().enumerate() {
            if di == 0.0 {
                continue;
            }
            for (j, nj) in next.iter_mut().enumerate() {
                *nj += di * model.transition[i][j];
            }
        }
        gap = d.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut d, &mut next);
        if gap < STATIONARY_TOLERANCE {
            let sum: f64 = d.iter().sum();
            d.iter_mut().for_each(|v| *v /= sum);
            return Ok(StationaryDistribution {
                probs: d,
                iterations: it + 1,
                unique: structure.is_unichain(),
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: STATIONARY_MAX_ITERS,
        gap,
    })
}

/// Left product `d·Q` for a state distribution.
pub fn propagate(model: &PomdpModel, d: &[f64]) -> Vec<f64> {
    let m = model.num_states();
    let mut out = vec![0.0; m];
    for (i, &di) in d.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += di * model.transition[i][j];
        }
    }
    out
}

/// Frequently used instances.
pub mod presets {
    use super::PomdpModel;

    /// Two-state symmetric chain that stays put with probability `stay`.
    pub fn symmetric_transition(stay: f64) -> Vec<Vec<f64>> {
        vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]]
    }

    /// Symmetric chain observed by a noiseless sensor.
    pub fn perfect_sensor(stay: f64) -> PomdpModel {
        PomdpModel::new(symmetric_transition(stay), vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).expect("valid preset")
    }

    /// Symmetric chain observed by a sensor whose output ignores the state.
    pub fn uninformative_sensor(stay: f64) -> PomdpModel {
        PomdpModel::new(symmetric_transition(stay), vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]]]).expect("valid preset")
    }

    /// Two sensors, each sharp on one state and blind on the other.
    pub fn cross_sensor(stay: f64) -> PomdpModel {
        PomdpModel::new(
            symmetric_transition(stay),
            vec![
                vec![vec![0.95, 0.05], vec![0.5, 0.5]],
                vec![vec![0.5, 0.5], vec![0.05, 0.95]],
            ],
        )
        .expect("valid preset")
    }

    /// An uninformative sensor followed by a perfect one.
    pub fn uninformative_and_perfect(stay: f64) -> PomdpModel {
        PomdpModel::new(
            symmetric_transition(stay),
            vec![
                vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ],
        )
        .expect("valid preset")
    }
}
