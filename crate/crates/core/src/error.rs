use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An input coordinate, angle, or parameter was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A wall's endpoints coincide (length below 1e-9 m).
    #[error("degenerate wall: length {length:.3e} m below 1e-9 m minimum")]
    DegenerateWall { length: f64 },

    /// The map document failed validation (unknown material, bad loss, ...).
    #[error("invalid map: {0}")]
    InvalidMap(String),

    /// An operation parameter violated its domain (range, sign, budget).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The scenario file failed validation.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// A state position coincides with a virtual anchor; the range/bearing
    /// measurement model is undefined there.
    #[error("measurement singularity: state within {r:.3e} m of virtual anchor")]
    AnchorSingularity { r: f64 },

    /// The stacked innovation covariance is numerically singular; the caller
    /// should treat the step as an outage and coast.
    #[error("innovation covariance ill-conditioned (cond {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
