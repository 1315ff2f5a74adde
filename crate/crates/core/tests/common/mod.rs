//! Randomized-scene helpers shared by the integration tests.
//!
//! Scenes are drawn from a seeded generator and filtered to exclude
//! measure-zero degeneracies (endpoints grazed by a path, terminals sitting
//! on a wall) that the continuous-geometry contracts do not cover.

use mapat::geom::{point_segment_distance, Point2, Vec2};
use mapat::map::{MapModel, Material};
use mapat::mapat::MpcMeasurement;
use mapat::raytrace::{
    synthesize_measurements, trace_paths, NoiseSpec, PropagationPath, TraceConfig,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Minimum distance kept between a terminal (base station or user) and any
/// wall, and between any path leg and any wall endpoint.
pub const CLEARANCE: f64 = 0.7;

pub struct Scene {
    pub map: MapModel,
    pub bs: Point2,
    pub ue: Point2,
}

pub fn random_map(rng: &mut ChaCha8Rng) -> MapModel {
    let mut builder = MapModel::builder()
        .material(
            "opaque",
            Material {
                reflection_loss_db: rng.random_range(3.0..8.0),
                penetration_loss_db: rng.random_range(10.0..20.0),
            },
        )
        .material(
            "light",
            Material {
                reflection_loss_db: rng.random_range(3.0..8.0),
                penetration_loss_db: rng.random_range(8.0..15.0),
            },
        );
    let n = rng.random_range(1..=10);
    for _ in 0..n {
        let a = Point2::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let len = rng.random_range(2.0..20.0);
        let b = a + Vec2::new(theta.cos(), theta.sin()) * len;
        let material = if rng.random_range(0..2) == 0 {
            "opaque"
        } else {
            "light"
        };
        builder = builder.wall(a, b, material);
    }
    builder.build().expect("finite random walls")
}

fn clear_point(rng: &mut ChaCha8Rng, map: &MapModel) -> Point2 {
    loop {
        let p = Point2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let clear = map
            .walls()
            .iter()
            .all(|w| point_segment_distance(p, w.a(), w.b()) >= CLEARANCE);
        if clear {
            return p;
        }
    }
}

/// True when every interaction point is well inside its wall and every leg
/// stays clear of every wall endpoint.
fn path_is_robust(map: &MapModel, path: &PropagationPath) -> bool {
    for i in &path.interactions {
        let w = map.wall(i.wall);
        if i.point.distance(w.a()) < 1e-2 || i.point.distance(w.b()) < 1e-2 {
            return false;
        }
    }
    let vertices = path.vertices();
    for leg in vertices.windows(2) {
        for w in map.walls() {
            for endpoint in [w.a(), w.b()] {
                if point_segment_distance(endpoint, leg[0], leg[1]) < 1e-2 {
                    return false;
                }
            }
        }
    }
    true
}

/// Draws scenes until one offers at least `min_paths` robust noiseless
/// paths, then returns it with those paths.
pub fn scene_with_paths(rng: &mut ChaCha8Rng, min_paths: usize) -> (Scene, Vec<PropagationPath>) {
    let config = TraceConfig::default();
    loop {
        let map = random_map(rng);
        let bs = clear_point(rng, &map);
        let ue = clear_point(rng, &map);
        if bs.distance(ue) < 2.0 {
            continue;
        }
        let paths = trace_paths(&map, bs, ue, &config).expect("trace random scene");
        if paths.len() < min_paths {
            continue;
        }
        if !paths.iter().all(|p| path_is_robust(&map, p)) {
            continue;
        }
        // When every path meets the same wall last, the user's mirror image
        // across that wall explains all measurements exactly as well as the
        // user does; no angle/delay estimator can break that tie. Such
        // scenes are excluded as inherently ambiguous.
        let last_walls: Vec<_> = paths
            .iter()
            .map(|p| p.interactions.last().map(|i| i.wall))
            .collect();
        if last_walls[0].is_some() && last_walls.iter().all(|w| *w == last_walls[0]) {
            continue;
        }
        return (Scene { map, bs, ue }, paths);
    }
}

/// Exact angle/delay readings for every traced path, in traced order.
pub fn noiseless_mpcs(paths: &[PropagationPath]) -> Vec<MpcMeasurement> {
    synthesize_measurements(
        paths,
        &NoiseSpec::noiseless(0),
        paths.len(),
        f64::NEG_INFINITY,
    )
    .expect("noiseless synthesis")
}
