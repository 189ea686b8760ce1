//! Sensor-selection rules evaluated on exact beliefs.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filter::Belief;
use crate::solver::{BeliefGrid, GridPolicy};

/// A stationary rule `w : simplex → sensor`.
#[derive(Debug, Clone)]
pub enum PolicyFunction {
    Constant(usize),
    /// Two-state rule: `at_or_above` when `x[0] ≥ theta`, otherwise `below`.
    Threshold {
        theta: f64,
        at_or_above: usize,
        below: usize,
    },
    /// Grid schedule applied through nearest-cell lookup.
    Grid {
        grid: Arc<BeliefGrid>,
        policy: Arc<GridPolicy>,
    },
}

impl PolicyFunction {
    /// Threshold rule using sensor 0 above `theta` and sensor 1 below.
    pub fn threshold(theta: f64) -> Self {
        PolicyFunction::Threshold {
            theta,
            at_or_above: 0,
            below: 1,
        }
    }

    pub fn grid(grid: Arc<BeliefGrid>, policy: GridPolicy) -> Self {
        PolicyFunction::Grid {
            grid,
            policy: Arc::new(policy),
        }
    }

    pub fn select(&self, x: &[f64]) -> usize {
        match self {
            PolicyFunction::Constant(a) => *a,
            PolicyFunction::Threshold {
                theta,
                at_or_above,
                below,
            } => {
                if x[0] >= *theta {
                    *at_or_above
                } else {
                    *below
                }
            }
            PolicyFunction::Grid { grid, policy } => policy.action(grid.project(x)),
        }
    }

    pub fn select_belief(&self, belief: &Belief) -> usize {
        self.select(belief.probs())
    }

    /// Checks sensor indices and dimensions against a model.
    pub fn check(&self, num_states: usize, num_sensors: usize) -> Result<()> {
        let in_range = |a: usize| {
            if a < num_sensors {
                Ok(())
            } else {
                Err(Error::SensorOutOfRange { sensor: a, num_sensors })
            }
        };
        match self {
            PolicyFunction::Constant(a) => in_range(*a),
            PolicyFunction::Threshold { at_or_above, below, .. } => {
                if num_states != 2 {
                    return Err(Error::InvalidPolicy(format!(
                        "threshold policies need a two-state model, this one has {num_states}"
                    )));
                }
                in_range(*at_or_above)?;
                in_range(*below)
            }
            PolicyFunction::Grid { grid, policy } => {
                if grid.num_states() != num_states {
                    return Err(Error::DimensionMismatch {
                        expected: num_states,
                        actual: grid.num_states(),
                    });
                }
                policy.check(grid, num_sensors)
            }
        }
    }

    /// Tabulates the rule on every grid point.
    pub fn to_grid_policy(&self, grid: &BeliefGrid) -> GridPolicy {
        match self {
            PolicyFunction::Grid { grid: own, policy } if own.as_ref() == grid => policy.as_ref().clone(),
            _ => GridPolicy::new(grid.points().iter().map(|p| self.select(p)).collect()),
        }
    }
}

impl fmt::Display for PolicyFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyFunction::Constant(a) => write!(f, "const:{a}"),
            PolicyFunction::Threshold { theta, .. } => write!(f, "threshold:{theta}"),
            PolicyFunction::Grid { grid, .. } => write!(f, "grid(r={})", grid.resolution()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::build_grid;

    #[test]
    fn threshold_boundary_goes_to_upper_sensor() {
        let p = PolicyFunction::threshold(0.5);
        assert_eq!(p.select(&[0.5, 0.5]), 0);
        assert_eq!(p.select(&[0.49, 0.51]), 1);
    }

    #[test]
    fn grid_policy_uses_nearest_cell() {
        let grid = Arc::new(build_grid(2, 10).unwrap());
        let table: Vec<usize> = (0..grid.len()).map(|i| usize::from(i >= 3)).collect();
        let p = PolicyFunction::grid(grid.clone(), GridPolicy::new(table));
        assert_eq!(p.select(&[0.24, 0.76]), 0);
        assert_eq!(p.select(&[0.26, 0.74]), 1);
        assert_eq!(p.to_grid_policy(&grid).len(), 11);
    }

    #[test]
    fn threshold_rejected_for_three_states() {
        assert!(PolicyFunction::threshold(0.5).check(3, 2).is_err());
        assert!(PolicyFunction::Constant(2).check(2, 2).is_err());
    }
}
