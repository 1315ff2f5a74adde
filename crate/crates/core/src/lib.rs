//! Map-assisted positioning and tracking for directional millimeter-wave /
//! sub-THz links.
//!
//! The pipeline: a 2-D wall map ([`map`]) feeds an image-method ray tracer
//! ([`raytrace`]) that synthesizes per-path angle/delay measurements; each
//! measured path is traced backwards through the map to candidate user
//! locations ([`mapat`]); agreeing candidates resolve the paths into
//! mirror-image anchor points ([`anchors`]) whose range/bearing readings
//! drive a constant-velocity extended Kalman filter ([`ekf`]); the
//! [`runner`] wires a configured walk ([`scenario`]) through all of it and
//! reports error statistics.

pub mod anchors;
pub mod ekf;
mod error;
pub mod geom;
pub mod map;
pub mod mapat;
pub mod raytrace;
pub mod runner;
pub mod scenario;

pub use error::{Error, Result};

/// Propagation speed used to convert time of flight to distance, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
