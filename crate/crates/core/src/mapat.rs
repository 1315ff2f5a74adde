//! Map-assisted position estimation from angle and time observations.
//!
//! Each measured component is back-traced from the base station along its
//! arrival bearing with a travel budget of c times its time of flight. Every
//! wall met along the way forks the trace into a reflected ray and a
//! straight-through penetrating ray, so one measurement yields a set of
//! hypothesized user locations — one per branch, each placed where the
//! travel budget runs out. Locations where many distinct measurements agree
//! are the position estimate; scattered leftovers are discarded.

use serde::{Deserialize, Serialize};

use crate::geom::{Point2, UnitVec2};
use crate::map::{MapModel, WallId};
use crate::raytrace::{Interaction, InteractionKind};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// One measured multipath component at the base station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcMeasurement {
    /// Index of this component within its measurement snapshot.
    pub id: usize,
    /// Arrival bearing at the base station, radians CCW from +x.
    pub aoa: f64,
    /// Time of flight, seconds.
    pub tof: f64,
    /// Received power if known, dB.
    pub power_db: Option<f64>,
}

impl MpcMeasurement {
    fn validate(&self) -> Result<()> {
        if !self.aoa.is_finite() {
            return Err(Error::NonFinite("measurement bearing"));
        }
        if !self.tof.is_finite() || self.tof <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "measurement tof must be positive, got {}",
                self.tof
            )));
        }
        Ok(())
    }
}

/// A hypothesized user location produced by back-tracing one measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLocation {
    pub position: Point2,
    /// Wall encounters along the back-traced branch, in travel order from
    /// the base station.
    pub interactions: Vec<Interaction>,
    /// Which measurement this branch came from.
    pub source_mpc: usize,
    /// True when the travel budget ran out exactly on a wall, leaving the
    /// interaction there unresolved.
    pub at_wall: bool,
}

impl CandidateLocation {
    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }
}

/// Budgets for back-tracing a single measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktraceConfig {
    /// Maximum wall interactions (of either kind) per branch.
    pub depth_budget: usize,
    /// Upper bound on c·tof, meters; longer measurements are rejected.
    pub max_range_m: f64,
}

impl Default for BacktraceConfig {
    fn default() -> Self {
        Self {
            depth_budget: 4,
            max_range_m: 500.0,
        }
    }
}

impl BacktraceConfig {
    fn validate(&self) -> Result<()> {
        if self.depth_budget > 6 {
            return Err(Error::InvalidParameter(format!(
                "depth_budget {} exceeds the supported maximum of 6",
                self.depth_budget
            )));
        }
        if !self.max_range_m.is_finite() || self.max_range_m <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "max_range_m must be positive and finite, got {}",
                self.max_range_m
            )));
        }
        Ok(())
    }
}

/// Travel budget ending within this distance of a wall counts as "on" it.
const AT_WALL_EPS: f64 = 1e-9;

/// All hypothesized user locations for one measurement.
///
/// The trace launches from `bs` along the measured bearing with travel
/// budget c·tof. Each wall hit inside the budget forks the branch into a
/// reflection and a straight-through penetration, each consuming one depth
/// slot; branches whose depth is spent continue straight, passing through
/// any further walls untouched. Every branch ends with one candidate where
/// its budget reaches zero, so the result is never empty. Branches whose
/// budget runs out exactly on a wall yield a candidate flagged `at_wall`.
pub fn backtrace_candidates(
    map: &MapModel,
    bs: Point2,
    mpc: &MpcMeasurement,
    config: &BacktraceConfig,
) -> Result<Vec<CandidateLocation>> {
    config.validate()?;
    mpc.validate()?;
    if !bs.is_finite() {
        return Err(Error::NonFinite("base station position"));
    }
    let range = SPEED_OF_LIGHT * mpc.tof;
    if range >= config.max_range_m {
        return Err(Error::InvalidParameter(format!(
            "measured range {range:.3} m exceeds the {:.0} m limit",
            config.max_range_m
        )));
    }

    let dir = UnitVec2::from_angle(mpc.aoa)?;
    let mut out = Vec::new();
    let mut trail = Vec::new();
    walk(
        map,
        bs,
        dir,
        range,
        config.depth_budget,
        None,
        &mut trail,
        mpc.id,
        &mut out,
    )?;
    Ok(out)
}

/// Recursive branch march; `trail` carries the interactions so far.
#[allow(clippy::too_many_arguments)]
fn walk(
    map: &MapModel,
    pos: Point2,
    dir: UnitVec2,
    remaining: f64,
    depth_left: usize,
    came_from: Option<WallId>,
    trail: &mut Vec<Interaction>,
    source_mpc: usize,
    out: &mut Vec<CandidateLocation>,
) -> Result<()> {
    let skip: Vec<WallId> = came_from.into_iter().collect();
    let hit = if depth_left == 0 {
        // Depth spent: the ray keeps going straight, ignoring further walls.
        None
    } else {
        map.first_hit(pos, dir, remaining, &skip)?
    };

    let Some(hit) = hit else {
        out.push(CandidateLocation {
            position: pos + dir.as_vec() * remaining,
            interactions: trail.clone(),
            source_mpc,
            at_wall: false,
        });
        return Ok(());
    };

    if remaining - hit.distance < AT_WALL_EPS {
        // Budget ends on the wall itself; the interaction there is
        // unresolvable, so record the spot and flag it.
        out.push(CandidateLocation {
            position: hit.point,
            interactions: trail.clone(),
            source_mpc,
            at_wall: true,
        });
        return Ok(());
    }

    let left = remaining - hit.distance;
    let wall = map.wall(hit.wall);

    trail.push(Interaction {
        kind: InteractionKind::Reflection,
        wall: hit.wall,
        point: hit.point,
    });
    let reflected = UnitVec2::try_from_vec(wall.reflect_direction(dir.as_vec()))?;
    walk(
        map,
        hit.point,
        reflected,
        left,
        depth_left - 1,
        Some(hit.wall),
        trail,
        source_mpc,
        out,
    )?;
    trail.pop();

    trail.push(Interaction {
        kind: InteractionKind::Transmission,
        wall: hit.wall,
        point: hit.point,
    });
    walk(
        map,
        hit.point,
        dir,
        left,
        depth_left - 1,
        Some(hit.wall),
        trail,
        source_mpc,
        out,
    )?;
    trail.pop();

    Ok(())
}

/// An agreed position across multiple measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    /// Centroid of the agreeing candidates.
    pub position: Point2,
    /// How many distinct measurements contributed a candidate.
    pub support: usize,
    /// RMS spread of the contributing candidates about the centroid, meters.
    pub residual: f64,
    /// The chosen candidate branch for each supporting measurement, ordered
    /// by measurement id.
    pub per_mpc_paths: Vec<CandidateLocation>,
}

/// Finds the spot where the most measurements place a candidate.
///
/// `candidate_sets` holds one candidate list per measurement. Every
/// candidate seeds a cluster: each measurement contributes its nearest
/// candidate within `cluster_radius` of the seed (at most one per
/// measurement). The best cluster wins by support, then smaller spread, then
/// fewer total wall interactions, then lower seed measurement id. Returns
/// `None` when fewer than two measurements are available or no two of them
/// agree anywhere.
pub fn estimate_position(
    candidate_sets: &[Vec<CandidateLocation>],
    cluster_radius: f64,
) -> Result<Option<PositionFix>> {
    if !cluster_radius.is_finite() || cluster_radius <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "cluster_radius must be positive and finite, got {cluster_radius}"
        )));
    }
    if candidate_sets.len() < 2 {
        return Ok(None);
    }

    struct Cluster {
        members: Vec<CandidateLocation>,
        centroid: Point2,
        residual: f64,
        total_interactions: usize,
        seed_mpc: usize,
    }

    let mut best: Option<Cluster> = None;
    for seed_set in candidate_sets {
        for seed in seed_set {
            let mut members: Vec<CandidateLocation> = Vec::new();
            for set in candidate_sets {
                let mut nearest: Option<(f64, &CandidateLocation)> = None;
                for cand in set {
                    let d = cand.position.distance(seed.position);
                    if d > cluster_radius {
                        continue;
                    }
                    // Strict < keeps the first of equally near candidates.
                    if nearest.is_none_or(|(nd, _)| d < nd) {
                        nearest = Some((d, cand));
                    }
                }
                if let Some((_, cand)) = nearest {
                    members.push(cand.clone());
                }
            }
            if members.len() < 2 {
                continue;
            }
            let n = members.len() as f64;
            let cx = members.iter().map(|m| m.position.x).sum::<f64>() / n;
            let cy = members.iter().map(|m| m.position.y).sum::<f64>() / n;
            let centroid = Point2::new(cx, cy);
            let residual = (members
                .iter()
                .map(|m| m.position.distance(centroid).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            let cluster = Cluster {
                total_interactions: members.iter().map(|m| m.num_interactions()).sum(),
                seed_mpc: seed.source_mpc,
                members,
                centroid,
                residual,
            };
            let replace = match &best {
                None => true,
                Some(b) => {
                    let support = cluster.members.len();
                    let b_support = b.members.len();
                    support > b_support
                        || (support == b_support
                            && (cluster.residual < b.residual - 1e-15
                                || ((cluster.residual - b.residual).abs() <= 1e-15
                                    && (cluster.total_interactions < b.total_interactions
                                        || (cluster.total_interactions == b.total_interactions
                                            && cluster.seed_mpc < b.seed_mpc)))))
                }
            };
            if replace {
                best = Some(cluster);
            }
        }
    }

    Ok(best.map(|c| PositionFix {
        position: c.centroid,
        support: c.members.len(),
        residual: c.residual,
        per_mpc_paths: c.members,
    }))
}
