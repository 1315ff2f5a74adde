//! Site map: wall segments with per-material interaction losses.
//!
//! A map is a flat list of wall segments in the horizontal plane. Each wall
//! references a material that sets how many dB a ray loses when it reflects
//! off or penetrates through that wall. Walls are treated as infinitely thin,
//! two-sided mirrors/screens. An empty map (no walls) is legal and models
//! free space.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{line_params, Aabb, Point2, UnitVec2, Vec2};
use crate::{Error, Result};

/// Walls shorter than this are rejected at build time.
pub const MIN_WALL_LENGTH: f64 = 1e-9;

/// Rays ignore hits closer than this to their origin, so a ray leaving a wall
/// does not immediately re-hit it.
pub const SELF_HIT_EPS: f64 = 1e-9;

/// Index of a wall within its map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WallId(pub usize);

impl fmt::Display for WallId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wall#{}", self.0)
    }
}

/// Interaction losses for one wall material, in dB (non-negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub reflection_loss_db: f64,
    pub penetration_loss_db: f64,
}

impl Material {
    fn validate(&self, name: &str) -> Result<()> {
        for (label, v) in [
            ("reflection_loss_db", self.reflection_loss_db),
            ("penetration_loss_db", self.penetration_loss_db),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite("material loss"));
            }
            if v < 0.0 {
                return Err(Error::InvalidMap(format!(
                    "material '{name}': {label} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One wall segment. Fields are validated at construction and kept private.
#[derive(Debug, Clone, PartialEq)]
pub struct Wall {
    a: Point2,
    b: Point2,
    material: usize,
}

impl Wall {
    pub fn a(&self) -> Point2 {
        self.a
    }

    pub fn b(&self) -> Point2 {
        self.b
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Unit vector from endpoint `a` to endpoint `b`.
    pub fn direction(&self) -> UnitVec2 {
        // Length was checked at build time, so normalization cannot fail.
        UnitVec2::try_from_vec(self.b - self.a).expect("wall length validated")
    }

    /// Unit normal (direction rotated +90 degrees); sign is arbitrary since
    /// walls are two-sided.
    pub fn normal(&self) -> UnitVec2 {
        let d = self.direction().as_vec();
        UnitVec2::try_from_vec(Vec2::new(-d.y, d.x)).expect("rotation preserves norm")
    }

    /// Mirror image of `p` across this wall's infinite supporting line.
    pub fn mirror(&self, p: Point2) -> Point2 {
        let n = self.normal().as_vec();
        let d = (p - self.a).dot(n);
        p + n * (-2.0 * d)
    }

    /// Specular reflection of the incoming direction `d` off this wall.
    pub fn reflect_direction(&self, d: Vec2) -> Vec2 {
        let n = self.normal().as_vec();
        d + n * (-2.0 * d.dot(n))
    }
}

/// A ray/wall hit returned by [`MapModel::first_hit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub wall: WallId,
    pub point: Point2,
    /// Distance from the ray origin to the hit point, meters.
    pub distance: f64,
}

/// Immutable validated site map.
#[derive(Debug, Clone)]
pub struct MapModel {
    walls: Vec<Wall>,
    materials: Vec<Material>,
    material_names: Vec<String>,
    bounds: Aabb,
}

impl MapModel {
    pub fn builder() -> MapBuilder {
        MapBuilder::default()
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn wall(&self, id: WallId) -> &Wall {
        &self.walls[id.0]
    }

    pub fn material_of(&self, id: WallId) -> &Material {
        &self.materials[self.walls[id.0].material]
    }

    pub fn material_name_of(&self, id: WallId) -> &str {
        &self.material_names[self.walls[id.0].material]
    }

    /// Bounding box of all wall endpoints; inverted (min > max) for an empty
    /// map.
    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    /// Nearest wall met by the ray `origin + t * dir` with `t` in
    /// (self-hit epsilon, `max_range`].
    ///
    /// Walls listed in `skip` are ignored. Ties in distance resolve to the
    /// lowest wall id. `Ok(None)` means the ray runs its full range freely.
    pub fn first_hit(
        &self,
        origin: Point2,
        dir: UnitVec2,
        max_range: f64,
        skip: &[WallId],
    ) -> Result<Option<Hit>> {
        if !origin.is_finite() {
            return Err(Error::NonFinite("ray origin"));
        }
        if !max_range.is_finite() || max_range <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "ray max_range must be positive and finite, got {max_range}"
            )));
        }
        let d = dir.as_vec();
        let mut best: Option<Hit> = None;
        for (i, wall) in self.walls.iter().enumerate() {
            let id = WallId(i);
            if skip.contains(&id) {
                continue;
            }
            let ab = wall.b - wall.a;
            let Some((t, s)) = line_params(origin, d, wall.a, ab) else {
                continue;
            };
            if t <= SELF_HIT_EPS || t > max_range || !(-1e-9..=1.0 + 1e-9).contains(&s) {
                continue;
            }
            let hit = Hit {
                wall: id,
                point: origin + d * t,
                distance: t,
            };
            match &best {
                Some(b) if b.distance <= hit.distance => {}
                _ => best = Some(hit),
            }
        }
        Ok(best)
    }

    /// Walls strictly crossed by the open segment from `from` to `to`,
    /// ordered by distance from `from`.
    ///
    /// Crossings within `1e-9` m of either endpoint are ignored, so a segment
    /// that starts or ends exactly on a wall does not count that wall. Walls
    /// in `skip` are ignored entirely.
    pub fn segment_crossings(&self, from: Point2, to: Point2, skip: &[WallId]) -> Vec<Hit> {
        let d = to - from;
        let len = d.norm();
        if len < 1e-12 {
            return Vec::new();
        }
        let mut hits = Vec::new();
        for (i, wall) in self.walls.iter().enumerate() {
            let id = WallId(i);
            if skip.contains(&id) {
                continue;
            }
            let ab = wall.b - wall.a;
            let Some((t, s)) = line_params(from, d, wall.a, ab) else {
                continue;
            };
            let guard = 1e-9 / len;
            if t <= guard || t >= 1.0 - guard || !(-1e-9..=1.0 + 1e-9).contains(&s) {
                continue;
            }
            hits.push(Hit {
                wall: id,
                point: from + d * t,
                distance: t * len,
            });
        }
        hits.sort_by(|p, q| {
            p.distance
                .partial_cmp(&q.distance)
                .expect("finite distances")
                .then(p.wall.cmp(&q.wall))
        });
        hits
    }

    /// Loads a map from the JSON wall-list format.
    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: MapFile = serde_json::from_str(text)?;
        let mut builder = MapModel::builder();
        for (name, m) in &file.materials {
            builder = builder.material(name, *m);
        }
        for w in &file.walls {
            builder = builder.wall(w.a.into(), w.b.into(), &w.material);
        }
        builder.build()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut materials = BTreeMap::new();
        for (name, m) in self.material_names.iter().zip(&self.materials) {
            materials.insert(name.clone(), *m);
        }
        let file = MapFile {
            walls: self
                .walls
                .iter()
                .map(|w| WallEntry {
                    a: w.a.into(),
                    b: w.b.into(),
                    material: self.material_names[w.material].clone(),
                })
                .collect(),
            materials,
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk JSON schema for maps.
#[derive(Debug, Serialize, Deserialize)]
struct MapFile {
    walls: Vec<WallEntry>,
    materials: BTreeMap<String, Material>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WallEntry {
    a: [f64; 2],
    b: [f64; 2],
    material: String,
}

/// Accumulates materials and walls, validating everything in [`build`].
///
/// [`build`]: MapBuilder::build
#[derive(Debug, Default)]
pub struct MapBuilder {
    materials: Vec<(String, Material)>,
    walls: Vec<(Point2, Point2, String)>,
}

impl MapBuilder {
    pub fn material(mut self, name: &str, material: Material) -> Self {
        self.materials.push((name.to_string(), material));
        self
    }

    pub fn wall(mut self, a: Point2, b: Point2, material: &str) -> Self {
        self.walls.push((a, b, material.to_string()));
        self
    }

    pub fn build(self) -> Result<MapModel> {
        let mut names = Vec::new();
        let mut materials = Vec::new();
        for (name, m) in self.materials {
            if names.contains(&name) {
                return Err(Error::InvalidMap(format!("duplicate material '{name}'")));
            }
            m.validate(&name)?;
            names.push(name);
            materials.push(m);
        }
        let mut walls = Vec::new();
        let mut bounds = Aabb::empty();
        for (a, b, mat_name) in self.walls {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::NonFinite("wall endpoint"));
            }
            let length = a.distance(b);
            if length < MIN_WALL_LENGTH {
                return Err(Error::DegenerateWall { length });
            }
            let material = names
                .iter()
                .position(|n| n == &mat_name)
                .ok_or_else(|| Error::InvalidMap(format!("unknown material '{mat_name}'")))?;
            bounds.include(a);
            bounds.include(b);
            walls.push(Wall { a, b, material });
        }
        Ok(MapModel {
            walls,
            materials,
            material_names: names,
            bounds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn plain() -> Material {
        Material {
            reflection_loss_db: 5.0,
            penetration_loss_db: 15.0,
        }
    }

    fn one_wall(a: Point2, b: Point2) -> MapModel {
        MapModel::builder()
            .material("m", plain())
            .wall(a, b, "m")
            .build()
            .unwrap()
    }

    fn two_wall_map() -> MapModel {
        MapModel::builder()
            .material("brick", plain())
            .wall(Point2::new(10.0, -5.0), Point2::new(10.0, 5.0), "brick")
            .wall(Point2::new(0.0, 4.0), Point2::new(20.0, 4.0), "brick")
            .build()
            .unwrap()
    }

    #[test]
    fn mirror_known_points() {
        // Vertical line x = 1.
        let m = one_wall(Point2::new(1.0, -1.0), Point2::new(1.0, 1.0));
        let img = m.wall(WallId(0)).mirror(Point2::new(0.0, 0.0));
        assert_relative_eq!(img.x, 2.0, epsilon = 1e-12);
        assert_relative_eq!(img.y, 0.0, epsilon = 1e-12);

        // Diagonal through (0,1)-(1,0).
        let m = one_wall(Point2::new(0.0, 1.0), Point2::new(1.0, 0.0));
        let img = m.wall(WallId(0)).mirror(Point2::new(0.0, 0.0));
        assert_relative_eq!(img.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(img.y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mirror_is_involutive_and_fixes_the_wall() {
        let map = two_wall_map();
        let w = map.wall(WallId(1));
        let p = Point2::new(3.0, -2.0);
        let back = w.mirror(w.mirror(p));
        assert_relative_eq!(back.x, p.x, epsilon = 1e-12);
        assert_relative_eq!(back.y, p.y, epsilon = 1e-12);
        let on = w.mirror(Point2::new(7.0, 4.0));
        assert_relative_eq!(on.y, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn reflect_direction_known_cases() {
        let map = two_wall_map();
        // Normal incidence on the vertical wall x = 10.
        let r = map.wall(WallId(0)).reflect_direction(Vec2::new(1.0, 0.0));
        assert_relative_eq!(r.x, -1.0, epsilon = 1e-12);
        assert_relative_eq!(r.y, 0.0, epsilon = 1e-12);
        // Off the horizontal wall y = 4: (1, 1) -> (1, -1).
        let r = map.wall(WallId(1)).reflect_direction(Vec2::new(1.0, 1.0));
        assert_relative_eq!(r.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.y, -1.0, epsilon = 1e-12);
        // Involution and norm preservation.
        let d = Vec2::new(0.6, -0.8);
        let rr = map
            .wall(WallId(1))
            .reflect_direction(map.wall(WallId(1)).reflect_direction(d));
        assert_relative_eq!(rr.x, d.x, epsilon = 1e-12);
        assert_relative_eq!(rr.y, d.y, epsilon = 1e-12);
    }

    #[test]
    fn first_hit_axis_aligned() {
        let m = one_wall(Point2::new(10.0, -5.0), Point2::new(10.0, 5.0));
        let hit = m
            .first_hit(
                Point2::new(0.0, 0.0),
                UnitVec2::from_angle(0.0).unwrap(),
                20.0,
                &[],
            )
            .unwrap()
            .unwrap();
        assert_eq!(hit.wall, WallId(0));
        assert_relative_eq!(hit.point.x, 10.0, epsilon = 1e-9);
        assert_relative_eq!(hit.point.y, 0.0, epsilon = 1e-9);
        assert_relative_eq!(hit.distance, 10.0, epsilon = 1e-9);

        // Parallel miss.
        let none = m
            .first_hit(
                Point2::new(0.0, 0.0),
                UnitVec2::from_angle(std::f64::consts::FRAC_PI_2).unwrap(),
                20.0,
                &[],
            )
            .unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn first_hit_picks_nearest_wall() {
        let map = two_wall_map();
        let dir = UnitVec2::from_angle(std::f64::consts::FRAC_PI_4).unwrap();
        let hit = map
            .first_hit(Point2::new(0.0, 0.0), dir, 100.0, &[])
            .unwrap()
            .unwrap();
        // The diagonal reaches y = 4 at (4, 4) before x = 10 at (10, 10),
        // and (10, 10) is off the first wall anyway.
        assert_eq!(hit.wall, WallId(1));
        assert_relative_eq!(hit.point.x, 4.0, epsilon = 1e-9);
        assert_relative_eq!(hit.point.y, 4.0, epsilon = 1e-9);
        assert_relative_eq!(hit.distance, 32.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn first_hit_respects_range_and_skip() {
        let map = two_wall_map();
        let dir = UnitVec2::from_angle(0.0).unwrap();
        // Wall at distance 10 is beyond a 5 m range.
        assert!(map
            .first_hit(Point2::new(0.0, 0.0), dir, 5.0, &[])
            .unwrap()
            .is_none());
        // A hit exactly at the range limit counts.
        assert!(map
            .first_hit(Point2::new(0.0, 0.0), dir, 10.0, &[])
            .unwrap()
            .is_some());
        // Skipping the only reachable wall yields none.
        assert!(map
            .first_hit(Point2::new(0.0, 0.0), dir, 100.0, &[WallId(0)])
            .unwrap()
            .is_none());
        // Bad range is an input-domain error.
        assert!(map.first_hit(Point2::new(0.0, 0.0), dir, 0.0, &[]).is_err());
    }

    #[test]
    fn segment_crossings_orders_and_guards_endpoints() {
        let map = two_wall_map();
        // From below-left to upper-right, crossing y=4 at (9.5, 4) before
        // x=10 at (10, 4.8).
        let hits = map.segment_crossings(Point2::new(7.0, 0.0), Point2::new(12.0, 8.0), &[]);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].wall, WallId(1));
        assert_eq!(hits[1].wall, WallId(0));
        assert!(hits[0].distance < hits[1].distance);
        // A segment through the exact wall intersection ties on distance and
        // falls back to id order.
        let hits = map.segment_crossings(Point2::new(8.0, 0.0), Point2::new(12.0, 8.0), &[]);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].wall, WallId(0));
        assert_relative_eq!(hits[0].distance, hits[1].distance, epsilon = 1e-9);
        // Segment ending exactly on a wall does not count it.
        let hits = map.segment_crossings(Point2::new(8.0, 0.0), Point2::new(10.0, 4.0), &[]);
        assert!(hits.is_empty());
    }

    #[test]
    fn empty_map_is_legal_free_space() {
        let map = MapModel::builder().build().unwrap();
        assert!(map.walls().is_empty());
        let dir = UnitVec2::from_angle(1.0).unwrap();
        assert!(map
            .first_hit(Point2::new(0.0, 0.0), dir, 100.0, &[])
            .unwrap()
            .is_none());
    }

    #[test]
    fn builder_rejects_bad_maps() {
        let r = MapModel::builder()
            .material("m", plain())
            .wall(Point2::new(0.0, 0.0), Point2::new(0.0, 0.0), "m")
            .build();
        assert!(matches!(r, Err(Error::DegenerateWall { .. })));

        let r = MapModel::builder()
            .material("m", plain())
            .wall(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), "missing")
            .build();
        assert!(matches!(r, Err(Error::InvalidMap(_))));

        let r = MapModel::builder()
            .material(
                "m",
                Material {
                    reflection_loss_db: -1.0,
                    penetration_loss_db: 0.0,
                },
            )
            .wall(Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), "m")
            .build();
        assert!(matches!(r, Err(Error::InvalidMap(_))));
    }

    #[test]
    fn json_roundtrip() {
        let json = r#"{
            "walls": [
                {"a": [0.0, 0.0], "b": [10.0, 0.0], "material": "brick"},
                {"a": [10.0, 0.0], "b": [10.0, 6.0], "material": "glass"}
            ],
            "materials": {
                "brick": {"reflection_loss_db": 5.0, "penetration_loss_db": 15.0},
                "glass": {"reflection_loss_db": 8.0, "penetration_loss_db": 3.0}
            }
        }"#;
        let map = MapModel::from_json_str(json).unwrap();
        assert_eq!(map.walls().len(), 2);
        assert_relative_eq!(map.material_of(WallId(1)).penetration_loss_db, 3.0);
        assert_eq!(map.material_name_of(WallId(0)), "brick");

        let dir = std::env::temp_dir().join("mapat_map_roundtrip.json");
        map.save_json(&dir).unwrap();
        let again = MapModel::load_json(&dir).unwrap();
        assert_eq!(again.walls().len(), map.walls().len());
        assert_eq!(again.wall(WallId(0)).a(), map.wall(WallId(0)).a());
        std::fs::remove_file(&dir).ok();
    }
}
