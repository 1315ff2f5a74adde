//! Deterministic forward ray tracer and synthetic measurement generator.
//!
//! For every wall sequence up to the reflection budget, the transmitter is
//! mirrored across the sequence in order; walking the straight line from the
//! final image to the receiver back through the sequence recovers the
//! specular bounce points. Any other wall crossed along a leg is a straight
//! pass-through penetration. Paths whose penetration count exceeds the
//! budget are discarded. Traced paths can then be turned into noisy
//! angle/time observations with [`synthesize_measurements`].

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geom::{line_params, Point2};
use crate::map::{MapModel, WallId};
use crate::mapat::MpcMeasurement;
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Whether a ray bounces off a wall or passes through it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionKind {
    Reflection,
    Transmission,
}

/// One wall encounter along a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: InteractionKind,
    pub wall: WallId,
    /// Where the ray meets the wall.
    pub point: Point2,
}

/// Interaction budgets and carrier settings for forward tracing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Maximum specular reflections per path.
    pub max_reflections: usize,
    /// Maximum wall penetrations per path.
    pub max_transmissions: usize,
    /// Carrier frequency for the free-space term of the path gain, Hz.
    pub frequency_hz: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            max_reflections: 2,
            max_transmissions: 1,
            frequency_hz: 142.0e9,
        }
    }
}

impl TraceConfig {
    fn validate(&self) -> Result<()> {
        if !self.frequency_hz.is_finite() || self.frequency_hz <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "frequency_hz must be positive and finite, got {}",
                self.frequency_hz
            )));
        }
        if self.max_reflections + self.max_transmissions > 6 {
            return Err(Error::InvalidParameter(format!(
                "interaction budget {} + {} exceeds the supported total of 6",
                self.max_reflections, self.max_transmissions
            )));
        }
        Ok(())
    }
}

/// One multipath component from base station to user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    pub bs: Point2,
    pub ue: Point2,
    /// Wall encounters in travel order from the base station.
    pub interactions: Vec<Interaction>,
    /// Total polyline length, meters.
    pub length: f64,
    /// Azimuth of the first segment leaving the base station — the bearing a
    /// receive array at the base station measures for the uplink arrival.
    /// Radians CCW from +x.
    pub aoa_at_bs: f64,
    /// Time of flight, seconds.
    pub tof: f64,
    /// Path gain including interaction losses, dB.
    pub path_gain_db: f64,
}

impl PropagationPath {
    /// True when the path is the direct line with no wall interactions.
    pub fn is_los(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Full polyline from base station to user, pass-through points included.
    pub fn vertices(&self) -> Vec<Point2> {
        let mut v = Vec::with_capacity(self.interactions.len() + 2);
        v.push(self.bs);
        v.extend(self.interactions.iter().map(|i| i.point));
        v.push(self.ue);
        v
    }

    /// Walls reflected off, in travel order from the base station.
    pub fn reflection_walls(&self) -> Vec<WallId> {
        self.interactions
            .iter()
            .filter(|i| i.kind == InteractionKind::Reflection)
            .map(|i| i.wall)
            .collect()
    }

    pub fn num_reflections(&self) -> usize {
        self.interactions
            .iter()
            .filter(|i| i.kind == InteractionKind::Reflection)
            .count()
    }

    pub fn num_transmissions(&self) -> usize {
        self.interactions
            .iter()
            .filter(|i| i.kind == InteractionKind::Transmission)
            .count()
    }
}

/// Friis free-space gain with unit antenna gains at `distance` meters, dB.
pub fn free_space_gain_db(distance: f64, frequency_hz: f64) -> f64 {
    -20.0 * (4.0 * std::f64::consts::PI * distance * frequency_hz / SPEED_OF_LIGHT).log10()
}

/// Free-space gain at the path's length minus the per-interaction material
/// losses looked up in `map`.
pub fn path_gain_db(path: &PropagationPath, map: &MapModel, frequency_hz: f64) -> f64 {
    let mut gain = free_space_gain_db(path.length, frequency_hz);
    for i in &path.interactions {
        let m = map.material_of(i.wall);
        gain -= match i.kind {
            InteractionKind::Reflection => m.reflection_loss_db,
            InteractionKind::Transmission => m.penetration_loss_db,
        };
    }
    gain
}

/// All propagation paths from `bs` to `ue` within the interaction budgets,
/// strongest first.
///
/// Ordering is by gain descending, then length ascending, then interaction
/// count ascending; remaining ties keep wall-sequence enumeration order, so
/// the result is deterministic for a given map.
pub fn trace_paths(
    map: &MapModel,
    bs: Point2,
    ue: Point2,
    config: &TraceConfig,
) -> Result<Vec<PropagationPath>> {
    config.validate()?;
    if !bs.is_finite() || !ue.is_finite() {
        return Err(Error::NonFinite("trace endpoint"));
    }
    if bs.distance(ue) < 1e-9 {
        return Err(Error::InvalidParameter(
            "base station and user positions coincide".into(),
        ));
    }

    let mut paths = Vec::new();
    let mut seen: HashSet<Vec<(i64, i64)>> = HashSet::new();
    let mut sequence = Vec::new();
    enumerate_sequences(map, bs, ue, config, &mut sequence, &mut seen, &mut paths);

    paths.sort_by(|a, b| {
        b.path_gain_db
            .partial_cmp(&a.path_gain_db)
            .expect("finite gains")
            .then(a.length.partial_cmp(&b.length).expect("finite lengths"))
            .then(a.interactions.len().cmp(&b.interactions.len()))
    });
    Ok(paths)
}

/// Depth-first enumeration of consecutive-distinct wall sequences, shortest
/// and lexicographically smallest first.
fn enumerate_sequences(
    map: &MapModel,
    bs: Point2,
    ue: Point2,
    config: &TraceConfig,
    sequence: &mut Vec<WallId>,
    seen: &mut HashSet<Vec<(i64, i64)>>,
    out: &mut Vec<PropagationPath>,
) {
    if let Some(path) = build_path(map, bs, ue, sequence, config) {
        if seen.insert(quantize_vertices(&path.vertices())) {
            out.push(path);
        }
    }
    if sequence.len() == config.max_reflections {
        return;
    }
    for i in 0..map.walls().len() {
        let id = WallId(i);
        if sequence.last() == Some(&id) {
            continue;
        }
        sequence.push(id);
        enumerate_sequences(map, bs, ue, config, sequence, seen, out);
        sequence.pop();
    }
}

/// Vertices snapped to a micrometer grid, for duplicate-geometry detection.
fn quantize_vertices(vertices: &[Point2]) -> Vec<(i64, i64)> {
    vertices
        .iter()
        .map(|p| ((p.x * 1e6).round() as i64, (p.y * 1e6).round() as i64))
        .collect()
}

/// Realizes the path reflecting off `sequence` in order, or `None` when the
/// geometry is infeasible or the penetration budget is exceeded.
fn build_path(
    map: &MapModel,
    bs: Point2,
    ue: Point2,
    sequence: &[WallId],
    config: &TraceConfig,
) -> Option<PropagationPath> {
    let k = sequence.len();

    // Mirror the base station across the sequence: images[j] is the source
    // image after the first j reflections.
    let mut images = Vec::with_capacity(k + 1);
    images.push(bs);
    for &id in sequence {
        let prev = *images.last().expect("non-empty");
        images.push(map.wall(id).mirror(prev));
    }

    // Walk back from the user, pinning each bounce point onto its wall.
    let mut bounce_rev = Vec::with_capacity(k);
    let mut target = ue;
    for j in (0..k).rev() {
        let wall = map.wall(sequence[j]);
        let leg = target - images[j + 1];
        let len = leg.norm();
        if len < 1e-9 {
            return None;
        }
        let (t, s) = line_params(images[j + 1], leg, wall.a(), wall.b() - wall.a())?;
        // The bounce must sit on the wall segment, strictly between the
        // image and the downstream point (1e-9 m end guards).
        let guard = 1e-9 / len;
        if t <= guard || t >= 1.0 - guard || !(-1e-9..=1.0 + 1e-9).contains(&s) {
            return None;
        }
        let p = images[j + 1] + leg * t;
        bounce_rev.push(p);
        target = p;
    }

    let mut corners = Vec::with_capacity(k + 2);
    corners.push(bs);
    corners.extend(bounce_rev.into_iter().rev());
    corners.push(ue);

    // Validate legs, collecting penetrations of walls other than the leg's
    // own endpoints.
    let mut interactions = Vec::new();
    let mut transmissions = 0usize;
    for i in 0..=k {
        let from = corners[i];
        let to = corners[i + 1];
        if from.distance(to) < 1e-9 {
            return None;
        }
        let mut skip = Vec::new();
        if i >= 1 {
            skip.push(sequence[i - 1]);
        }
        if i < k {
            skip.push(sequence[i]);
        }
        for hit in map.segment_crossings(from, to, &skip) {
            transmissions += 1;
            if transmissions > config.max_transmissions {
                return None;
            }
            interactions.push(Interaction {
                kind: InteractionKind::Transmission,
                wall: hit.wall,
                point: hit.point,
            });
        }
        if i < k {
            interactions.push(Interaction {
                kind: InteractionKind::Reflection,
                wall: sequence[i],
                point: corners[i + 1],
            });
        }
    }

    let length: f64 = corners.windows(2).map(|w| w[0].distance(w[1])).sum();
    let first = corners[1] - corners[0];
    let aoa_at_bs = first.y.atan2(first.x);

    let mut path = PropagationPath {
        bs,
        ue,
        interactions,
        length,
        aoa_at_bs,
        tof: length / SPEED_OF_LIGHT,
        path_gain_db: 0.0,
    };
    path.path_gain_db = path_gain_db(&path, map, config.frequency_hz);
    Some(path)
}

/// Measurement noise levels and the seed for their random stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Time-of-flight noise standard deviation, seconds.
    pub sigma_tof: f64,
    /// Arrival-bearing noise standard deviation, radians.
    pub sigma_aoa: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        Self {
            sigma_tof: 0.0,
            sigma_aoa: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        for (label, v) in [("sigma_tof", self.sigma_tof), ("sigma_aoa", self.sigma_aoa)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{label} must be >= 0 and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Turns traced paths into noisy angle/time observations.
///
/// Keeps the `max_mpcs` strongest paths with gain above `min_gain_db`, then
/// perturbs each kept path's time of flight and bearing with independent
/// zero-mean Gaussian noise. The random stream depends only on `noise.seed`
/// and the kept-path order; the same two unit draws are consumed per path
/// regardless of the sigma values, so runs that differ only in sigma see the
/// same underlying noise realization scaled accordingly.
///
/// An empty result models an outage (no detectable component).
pub fn synthesize_measurements(
    paths: &[PropagationPath],
    noise: &NoiseSpec,
    max_mpcs: usize,
    min_gain_db: f64,
) -> Result<Vec<MpcMeasurement>> {
    noise.validate()?;

    let mut order: Vec<usize> = (0..paths.len()).collect();
    order.sort_by(|&a, &b| {
        paths[b]
            .path_gain_db
            .partial_cmp(&paths[a].path_gain_db)
            .expect("finite gains")
    });
    let kept: Vec<&PropagationPath> = order
        .into_iter()
        .map(|i| &paths[i])
        .filter(|p| p.path_gain_db > min_gain_db)
        .take(max_mpcs)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = Vec::with_capacity(kept.len());
    for (id, path) in kept.iter().enumerate() {
        let z_tof: f64 = StandardNormal.sample(&mut rng);
        let z_aoa: f64 = StandardNormal.sample(&mut rng);
        out.push(MpcMeasurement {
            id,
            aoa: path.aoa_at_bs + noise.sigma_aoa * z_aoa,
            tof: path.tof + noise.sigma_tof * z_tof,
            power_db: Some(path.path_gain_db),
        });
    }
    Ok(out)
}
