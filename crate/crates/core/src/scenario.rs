//! Scenario configuration: track, noise, filter parameters, and file I/O.
//!
//! A scenario describes one experiment: a site map, a base station, a
//! sequence of equally spaced waypoints walked at constant speed (one
//! measurement snapshot per waypoint), the measurement noise levels, and the
//! filter/tracer settings. The waypoint spacing must equal speed times the
//! sampling period, so each step of the filter corresponds to exactly one
//! waypoint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geom::{Point2, Vec2};
use crate::mapat::BacktraceConfig;
use crate::raytrace::{NoiseSpec, TraceConfig};
use crate::{Error, Result};

/// Complete description of one tracking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Site map file; relative paths resolve against the scenario file.
    pub map_path: PathBuf,
    /// Base station position, meters.
    pub bs: Point2,
    /// Track waypoints in walk order, equally spaced.
    pub waypoints: Vec<Point2>,
    /// Walking speed, m/s.
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Sampling period, seconds; one waypoint per period.
    #[serde(default = "default_sample_period")]
    pub sample_period: f64,
    /// Measurement noise; the seed field is ignored in favor of the
    /// scenario-level seed schedule.
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    /// Random-acceleration standard deviation for the motion model, m/s².
    #[serde(default = "default_sigma_a")]
    pub sigma_a: f64,
    /// Initial state covariance is this scale times the identity.
    #[serde(default = "default_p1_scale")]
    pub p1_scale: f64,
    /// Forward tracer budgets for measurement synthesis.
    #[serde(default)]
    pub trace: TraceConfig,
    /// Back-tracer budgets for position estimation.
    #[serde(default)]
    pub backtrace: BacktraceConfig,
    /// Cluster radius for the position estimator, meters.
    #[serde(default = "default_cluster_radius")]
    pub cluster_radius: f64,
    /// Strongest components kept per measurement snapshot.
    #[serde(default = "default_max_mpcs")]
    pub max_mpcs: usize,
    /// Components weaker than the snapshot's best by more than this are
    /// dropped, dB.
    #[serde(default = "default_gain_window_db")]
    pub gain_window_db: f64,
    #[serde(default = "default_runs")]
    pub monte_carlo_runs: usize,
    /// Base seed; run `i` uses seed + i.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_speed() -> f64 {
    1.5
}
fn default_sample_period() -> f64 {
    2.0
}
fn default_noise() -> NoiseSpec {
    NoiseSpec {
        sigma_tof: 0.25e-9,
        sigma_aoa: 0.5_f64.to_radians(),
        seed: 0,
    }
}
fn default_sigma_a() -> f64 {
    0.05
}
fn default_p1_scale() -> f64 {
    0.01
}
fn default_cluster_radius() -> f64 {
    0.5
}
fn default_max_mpcs() -> usize {
    5
}
fn default_gain_window_db() -> f64 {
    60.0
}
fn default_runs() -> usize {
    100
}
fn default_seed() -> u64 {
    1
}

impl ScenarioConfig {
    /// Reads and validates a scenario file, resolving `map_path` against the
    /// file's directory.
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config: ScenarioConfig = serde_json::from_str(&text)?;
        if config.map_path.is_relative() {
            if let Some(dir) = path.parent() {
                config.map_path = dir.join(&config.map_path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidScenario(format!(
                "need at least 2 waypoints, got {}",
                self.waypoints.len()
            )));
        }
        if !self.bs.is_finite() || self.waypoints.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("scenario position"));
        }
        for (label, v) in [
            ("speed", self.speed),
            ("sample_period", self.sample_period),
            ("p1_scale", self.p1_scale),
            ("cluster_radius", self.cluster_radius),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidScenario(format!(
                    "{label} must be positive, got {v}"
                )));
            }
        }
        if !self.sigma_a.is_finite() || self.sigma_a < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "sigma_a must be >= 0, got {}",
                self.sigma_a
            )));
        }
        if !self.gain_window_db.is_finite() || self.gain_window_db < 0.0 {
            return Err(Error::InvalidScenario(format!(
                "gain_window_db must be >= 0, got {}",
                self.gain_window_db
            )));
        }
        if self.monte_carlo_runs == 0 {
            return Err(Error::InvalidScenario(
                "monte_carlo_runs must be at least 1".into(),
            ));
        }
        let step = self.speed * self.sample_period;
        for (i, pair) in self.waypoints.windows(2).enumerate() {
            let gap = pair[0].distance(pair[1]);
            if (gap - step).abs() > 1e-6 {
                return Err(Error::InvalidScenario(format!(
                    "waypoints {i} and {} are {gap:.6} m apart; speed × period \
                     requires {step:.6} m",
                    i + 1
                )));
            }
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if w.distance(self.bs) < 1e-9 {
                return Err(Error::InvalidScenario(format!(
                    "waypoint {i} coincides with the base station"
                )));
            }
        }
        Ok(())
    }

    /// True-track velocity leaving waypoint `k`, m/s; the last waypoint keeps
    /// its arrival velocity.
    pub fn velocity_at(&self, k: usize) -> Vec2 {
        let n = self.waypoints.len();
        let (from, to) = if k + 1 < n {
            (self.waypoints[k], self.waypoints[k + 1])
        } else {
            (self.waypoints[n - 2], self.waypoints[n - 1])
        };
        (to - from) * (1.0 / self.sample_period)
    }

    /// Steps whose incoming segment direction differs from the previous
    /// segment's — the step after each sharp turn, where the constant
    /// velocity model needs the scheduled control input.
    pub fn turn_steps(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for k in 2..self.waypoints.len() {
            let prev = self.waypoints[k - 1] - self.waypoints[k - 2];
            let cur = self.waypoints[k] - self.waypoints[k - 1];
            if (cur - prev).norm() > 1e-9 {
                out.push(k);
            }
        }
        out
    }
}

/// A rectangular loop of equally spaced waypoints, counter-clockwise from
/// `origin`, for building test tracks. `width` and `height` must be
/// multiples of `spacing`.
pub fn rectangular_track(
    origin: Point2,
    width: f64,
    height: f64,
    spacing: f64,
) -> Result<Vec<Point2>> {
    if spacing <= 0.0 || width <= 0.0 || height <= 0.0 {
        return Err(Error::InvalidParameter(
            "track dimensions and spacing must be positive".into(),
        ));
    }
    let nx = (width / spacing).round() as usize;
    let ny = (height / spacing).round() as usize;
    if (nx as f64 * spacing - width).abs() > 1e-9 || (ny as f64 * spacing - height).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "track sides must be whole multiples of the spacing".into(),
        ));
    }
    let mut pts = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        pts.push(Point2::new(origin.x + i as f64 * spacing, origin.y));
    }
    for i in 0..ny {
        pts.push(Point2::new(origin.x + width, origin.y + i as f64 * spacing));
    }
    for i in 0..nx {
        pts.push(Point2::new(
            origin.x + width - i as f64 * spacing,
            origin.y + height,
        ));
    }
    for i in 0..ny {
        pts.push(Point2::new(
            origin.x,
            origin.y + height - i as f64 * spacing,
        ));
    }
    Ok(pts)
}
