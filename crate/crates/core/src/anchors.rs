//! Virtual anchors: turning resolved multipath components into range/bearing
//! landmarks.
//!
//! Mirroring the base station successively across a path's reflection walls
//! yields a point — the virtual anchor — whose straight-line distance to the
//! user equals the full folded path length. A reflected path thus behaves
//! exactly like a direct path from its anchor, which is what lets one filter
//! consume every component, line-of-sight or not, through the same
//! range-plus-bearing measurement model.

use nalgebra::{Matrix2x4, Vector4};
use serde::{Deserialize, Serialize};

use crate::geom::{Point2, UnitVec2};
use crate::map::{MapModel, WallId};
use crate::raytrace::{Interaction, InteractionKind};
use crate::{Error, Result};

/// A mirrored base-station image acting as a direct-range landmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualAnchor {
    pub position: Point2,
    /// Which measurement snapshot entry this anchor resolves.
    pub source_mpc: usize,
}

/// What one anchor measures about a position: range and the cosine of the
/// bearing from the anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementVector {
    /// Distance from the anchor, meters.
    pub r: f64,
    /// (x − x_anchor) / r, dimensionless in [−1, 1].
    pub n_hat: f64,
}

/// Mirrors `bs` across each reflection wall of the path, in travel order.
///
/// Pass-through interactions leave the mirror chain untouched: they are
/// collinear with the adjacent legs, so they change neither the anchor nor
/// the anchor-to-user distance. A path with no reflections anchors at the
/// base station itself.
pub fn compute_virtual_anchor(
    map: &MapModel,
    bs: Point2,
    path: &[Interaction],
    source_mpc: usize,
) -> VirtualAnchor {
    let mut position = bs;
    for i in path {
        if i.kind == InteractionKind::Reflection {
            position = map.wall(i.wall).mirror(position);
        }
    }
    VirtualAnchor {
        position,
        source_mpc,
    }
}

/// Range and bearing-cosine of `position` as seen from the anchor.
pub fn predict_measurement(va: &VirtualAnchor, position: Point2) -> Result<MeasurementVector> {
    let dx = position.x - va.position.x;
    let dy = position.y - va.position.y;
    let r = (dx * dx + dy * dy).sqrt();
    if r < 1e-9 {
        return Err(Error::AnchorSingularity { r });
    }
    Ok(MeasurementVector { r, n_hat: dx / r })
}

/// Partial derivatives of (r, n̂) with respect to the state
/// [x, v_x, y, v_y], evaluated at `predicted_state`.
///
/// The velocity columns are exactly zero: neither range nor bearing depends
/// on velocity.
pub fn measurement_jacobian(
    va: &VirtualAnchor,
    predicted_state: &Vector4<f64>,
) -> Result<Matrix2x4<f64>> {
    let dx = predicted_state[0] - va.position.x;
    let dy = predicted_state[2] - va.position.y;
    let r = (dx * dx + dy * dy).sqrt();
    if r < 1e-9 {
        return Err(Error::AnchorSingularity { r });
    }
    let r3 = r * r * r;
    Ok(Matrix2x4::new(
        dx / r,
        0.0,
        dy / r,
        0.0,
        dy * dy / r3,
        0.0,
        -dy * dx / r3,
        0.0,
    ))
}

/// Direction of a path's final leg, given its arrival bearing at the base
/// station and the reflection walls met along the way.
///
/// The arrival direction is bounced off each reflection wall in travel
/// order; pass-throughs keep the direction unchanged. For an exact path the
/// result points from the virtual anchor straight at the user, so its x
/// component is the measured n̂.
pub fn propagate_bearing(
    map: &MapModel,
    aoa: f64,
    reflection_walls: &[WallId],
) -> Result<UnitVec2> {
    let mut dir = UnitVec2::from_angle(aoa)?;
    for &id in reflection_walls {
        dir = UnitVec2::try_from_vec(map.wall(id).reflect_direction(dir.as_vec()))?;
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::Material;
    use crate::raytrace::{trace_paths, TraceConfig};
    use crate::SPEED_OF_LIGHT;
    use approx::assert_relative_eq;

    fn material() -> Material {
        Material {
            reflection_loss_db: 5.0,
            penetration_loss_db: 15.0,
        }
    }

    fn reflection(wall: usize, x: f64, y: f64) -> Interaction {
        Interaction {
            kind: InteractionKind::Reflection,
            wall: WallId(wall),
            point: Point2::new(x, y),
        }
    }

    #[test]
    fn anchor_mirror_chain() {
        let map = MapModel::builder()
            .material("m", material())
            .wall(Point2::new(10.0, -5.0), Point2::new(10.0, 5.0), "m")
            .wall(Point2::new(0.0, 5.0), Point2::new(30.0, 5.0), "m")
            .build()
            .unwrap();
        let bs = Point2::new(0.0, 0.0);

        // Single bounce off x = 10.
        let va = compute_virtual_anchor(&map, bs, &[reflection(0, 10.0, 0.0)], 0);
        assert_relative_eq!(va.position.x, 20.0, epsilon = 1e-12);
        assert_relative_eq!(va.position.y, 0.0, epsilon = 1e-12);

        // x = 10 then y = 5.
        let va = compute_virtual_anchor(
            &map,
            bs,
            &[reflection(0, 10.0, 2.0), reflection(1, 8.0, 5.0)],
            1,
        );
        assert_relative_eq!(va.position.x, 20.0, epsilon = 1e-12);
        assert_relative_eq!(va.position.y, 10.0, epsilon = 1e-12);

        // Pass-through only: anchor stays at the base station.
        let va = compute_virtual_anchor(
            &map,
            bs,
            &[Interaction {
                kind: InteractionKind::Transmission,
                wall: WallId(0),
                point: Point2::new(10.0, 0.0),
            }],
            2,
        );
        assert_eq!(va.position, bs);
    }

    #[test]
    fn measurement_model_known_values() {
        let at = |x, y| VirtualAnchor {
            position: Point2::new(x, y),
            source_mpc: 0,
        };
        let z = predict_measurement(&at(0.0, 0.0), Point2::new(3.0, 4.0)).unwrap();
        assert_relative_eq!(z.r, 5.0, epsilon = 1e-12);
        assert_relative_eq!(z.n_hat, 0.6, epsilon = 1e-12);

        let z = predict_measurement(&at(0.0, 0.0), Point2::new(0.0, 7.0)).unwrap();
        assert_relative_eq!(z.r, 7.0, epsilon = 1e-12);
        assert_relative_eq!(z.n_hat, 0.0, epsilon = 1e-12);

        let z = predict_measurement(&at(20.0, 0.0), Point2::new(6.0, 0.0)).unwrap();
        assert_relative_eq!(z.r, 14.0, epsilon = 1e-12);
        assert_relative_eq!(z.n_hat, -1.0, epsilon = 1e-12);

        assert!(predict_measurement(&at(1.0, 2.0), Point2::new(1.0, 2.0)).is_err());
    }

    #[test]
    fn jacobian_known_values() {
        let va = VirtualAnchor {
            position: Point2::new(0.0, 0.0),
            source_mpc: 0,
        };
        let h = measurement_jacobian(&va, &Vector4::new(3.0, 0.7, 4.0, -0.2)).unwrap();
        assert_relative_eq!(h[(0, 0)], 0.6, epsilon = 1e-12);
        assert_relative_eq!(h[(0, 2)], 0.8, epsilon = 1e-12);
        assert_relative_eq!(h[(1, 0)], 0.128, epsilon = 1e-12);
        assert_relative_eq!(h[(1, 2)], -0.096, epsilon = 1e-12);
        // Velocity columns are identically zero.
        assert_eq!(h[(0, 1)], 0.0);
        assert_eq!(h[(0, 3)], 0.0);
        assert_eq!(h[(1, 1)], 0.0);
        assert_eq!(h[(1, 3)], 0.0);

        // On-axis: the bearing cosine is stationary.
        let h = measurement_jacobian(&va, &Vector4::new(5.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(h[(1, 0)], 0.0);
        assert_eq!(h[(1, 2)], 0.0);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            // splitmix64, mapped to [-1, 1).
            seed = seed.wrapping_add(0x9e3779b97f4a7c15);
            let mut z = seed;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
            z = z ^ (z >> 31);
            (z as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        let step = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let va = VirtualAnchor {
                position: Point2::new(next() * 50.0, next() * 50.0),
                source_mpc: 0,
            };
            let state = Vector4::new(next() * 50.0, next(), next() * 50.0, next());
            let dx = state[0] - va.position.x;
            let dy = state[2] - va.position.y;
            if (dx * dx + dy * dy).sqrt() < 0.1 {
                continue;
            }
            checked += 1;
            let h = measurement_jacobian(&va, &state).unwrap();
            for (row, col) in [(0usize, 0usize), (0, 2), (1, 0), (1, 2)] {
                let mut plus = state;
                plus[col] += step;
                let mut minus = state;
                minus[col] -= step;
                let zp = predict_measurement(&va, Point2::new(plus[0], plus[2])).unwrap();
                let zm = predict_measurement(&va, Point2::new(minus[0], minus[2])).unwrap();
                let fd = match row {
                    0 => (zp.r - zm.r) / (2.0 * step),
                    _ => (zp.n_hat - zm.n_hat) / (2.0 * step),
                };
                let denom = h[(row, col)].abs().max(1e-6);
                assert!(
                    (h[(row, col)] - fd).abs() / denom < 1e-5,
                    "row {row} col {col}: analytic {} vs fd {fd}",
                    h[(row, col)]
                );
            }
        }
    }

    #[test]
    fn anchor_distance_equals_path_length() {
        let map = MapModel::builder()
            .material("m", material())
            .wall(Point2::new(-5.0, 8.0), Point2::new(25.0, 8.0), "m")
            .wall(Point2::new(-5.0, -6.0), Point2::new(25.0, -6.0), "m")
            .wall(Point2::new(12.0, -2.0), Point2::new(12.0, 4.0), "m")
            .build()
            .unwrap();
        let bs = Point2::new(0.0, 0.5);
        let ue = Point2::new(20.0, 1.0);
        let paths = trace_paths(&map, bs, ue, &TraceConfig::default()).unwrap();
        assert!(paths.len() >= 3);
        for p in &paths {
            let va = compute_virtual_anchor(&map, bs, &p.interactions, 0);
            assert_relative_eq!(va.position.distance(ue), p.length, epsilon = 1e-9);
        }
    }

    #[test]
    fn noiseless_bearing_propagation_closes_the_loop() {
        let map = MapModel::builder()
            .material("m", material())
            .wall(Point2::new(-5.0, 8.0), Point2::new(25.0, 8.0), "m")
            .wall(Point2::new(12.0, -2.0), Point2::new(12.0, 4.0), "m")
            .build()
            .unwrap();
        let bs = Point2::new(0.0, 0.5);
        let ue = Point2::new(20.0, 1.0);
        let paths = trace_paths(&map, bs, ue, &TraceConfig::default()).unwrap();
        for p in &paths {
            let va = compute_virtual_anchor(&map, bs, &p.interactions, 0);
            let z = predict_measurement(&va, ue).unwrap();
            assert_relative_eq!(z.r, SPEED_OF_LIGHT * p.tof, max_relative = 1e-12);
            let dir = propagate_bearing(&map, p.aoa_at_bs, &p.reflection_walls()).unwrap();
            assert_relative_eq!(dir.x(), z.n_hat, max_relative = 1e-12, epsilon = 1e-12);
        }
    }
}
