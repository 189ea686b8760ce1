use thiserror::Error;

/// Errors raised by model loading, filtering, and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read model: {0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse model JSON: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("sensor index {sensor} out of range (model has {num_sensors} sensors)")]
    SensorOutOfRange { sensor: usize, num_sensors: usize },

    #[error("observation index {obs} out of range (model has {num_observations} observations)")]
    ObservationOutOfRange { obs: usize, num_observations: usize },

    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("conditioning on observation {obs} with predictive mass {mass:e}")]
    ZeroProbabilityObservation { obs: usize, mass: f64 },

    #[error("power iteration did not converge after {iterations} iterations (L1 gap {gap:e})")]
    NonConvergence { iterations: usize, gap: f64 },

    #[error(
        "observation tree too large: {nodes} expansion nodes exceeds the limit of {limit} (use Monte Carlo simulation instead)"
    )]
    HorizonTooLarge { nodes: f64, limit: f64 },

    #[error("belief grid has {points} points, limit is {limit}")]
    GridTooLarge { points: u128, limit: usize },

    #[error("grid resolution must be at least 1")]
    InvalidResolution,

    #[error(
        "relative value iteration hit its cap of {iterations} iterations without span convergence (span {span:e}){}",
        match .pia_iteration { Some(i) => format!(" during policy iteration step {i}"), None => String::new() }
    )]
    MultichainUnresolved {
        iterations: usize,
        span: f64,
        pia_iteration: Option<usize>,
    },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
