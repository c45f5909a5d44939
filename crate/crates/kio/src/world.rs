//! Procedural wall-dense worlds and exact geometric queries.
//!
//! Worlds are collections of axis-aligned boxes arranged as vertical wall
//! formations pierced by door-like gaps. All queries (signed distance, ray
//! intersection) are exact for boxes, which keeps the renderer, the shield
//! tests and the metrics free of discretization error.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Signed distance reported for a world with no walls, matching the default
/// sensing range so that metrics stay finite.
pub const EMPTY_WORLD_SENTINEL: f64 = 5.0;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("infeasible packing: {0}")]
    InfeasiblePacking(String),
    #[error("world file rejected: {0}")]
    InvalidFile(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl Wall {
    pub fn center_vec(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn half_extents_vec(&self) -> Vector3<f64> {
        Vector3::from(self.half_extents)
    }

    /// Exact signed distance to the box surface; negative inside.
    pub fn signed_distance(&self, point: &Vector3<f64>) -> f64 {
        let q = (point - self.center_vec()).abs() - self.half_extents_vec();
        let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    /// Slab-method entry distance of a ray into the box, if the ray origin
    /// is outside and the entry lies in `(0, t_max]`.
    pub fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let c = self.center_vec();
        let h = self.half_extents_vec();
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        for axis in 0..3 {
            let lo = c[axis] - h[axis];
            let hi = c[axis] + h[axis];
            if dir[axis].abs() < 1e-15 {
                if origin[axis] < lo || origin[axis] > hi {
                    return None;
                }
            } else {
                let inv = 1.0 / dir[axis];
                let (t0, t1) = {
                    let a = (lo - origin[axis]) * inv;
                    let b = (hi - origin[axis]) * inv;
                    if a <= b {
                        (a, b)
                    } else {
                        (b, a)
                    }
                };
                t_near = t_near.max(t0);
                t_far = t_far.min(t1);
                if t_near > t_far {
                    return None;
                }
            }
        }
        // Entering events only; an origin already inside the box has no
        // entry in (0, t_max].
        if t_near > 0.0 && t_near <= t_max {
            Some(t_near)
        } else {
            None
        }
    }
}

/// Immutable wall world. Generation is a pure function of (config, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub extent: [f64; 3],
    pub walls: Vec<Wall>,
}

impl World {
    pub fn empty(extent: [f64; 3], seed: u64) -> Self {
        Self {
            seed,
            extent,
            walls: Vec::new(),
        }
    }

    pub fn extent_vec(&self) -> Vector3<f64> {
        Vector3::from(self.extent)
    }

    /// Euclidean distance to the nearest wall surface, negative inside a
    /// wall, [`EMPTY_WORLD_SENTINEL`] when there are no walls.
    pub fn signed_distance(&self, point: &Vector3<f64>) -> f64 {
        self.walls
            .iter()
            .map(|w| w.signed_distance(point))
            .fold(f64::INFINITY, f64::min)
            .min(if self.walls.is_empty() {
                EMPTY_WORLD_SENTINEL
            } else {
                f64::INFINITY
            })
    }

    /// Smallest `t` in `(0, t_max]` at which the ray enters a wall.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        debug_assert!((dir.norm() - 1.0).abs() < 1e-9, "direction must be unit");
        self.walls
            .iter()
            .filter_map(|w| w.ray_entry(origin, dir, t_max))
            .fold(None, |best, t| match best {
                Some(b) if b <= t => Some(b),
                _ => Some(t),
            })
    }

    /// Indices of walls whose surface comes within `radius` of `point`.
    /// Used by the renderer to cull distant geometry.
    pub fn walls_within(&self, point: &Vector3<f64>, radius: f64) -> Vec<usize> {
        self.walls
            .iter()
            .enumerate()
            .filter(|(_, w)| w.signed_distance(point) <= radius)
            .map(|(i, _)| i)
            .collect()
    }

    /// Ray query restricted to a wall subset (see [`walls_within`]).
    pub fn ray_hit_subset(
        &self,
        subset: &[usize],
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_max: f64,
    ) -> Option<f64> {
        subset
            .iter()
            .filter_map(|&i| self.walls[i].ray_entry(origin, dir, t_max))
            .fold(None, |best, t| match best {
                Some(b) if b <= t => Some(b),
                _ => Some(t),
            })
    }

    pub fn contains(&self, point: &Vector3<f64>) -> bool {
        (0..3).all(|a| point[a] >= 0.0 && point[a] <= self.extent[a])
    }

    pub fn to_json(&self) -> Result<String, WorldError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let world: World = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for (i, w) in self.walls.iter().enumerate() {
            if w.half_extents.iter().any(|&h| !(h > 0.0)) {
                return Err(WorldError::InvalidFile(format!(
                    "wall {i} has non-positive half extents"
                )));
            }
            for axis in 0..3 {
                if w.center[axis] - w.half_extents[axis] < -1e-9
                    || w.center[axis] + w.half_extents[axis] > self.extent[axis] + 1e-9
                {
                    return Err(WorldError::InvalidFile(format!(
                        "wall {i} escapes the world extent on axis {axis}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generator parameters. The full-scale defaults give a 100x100x16 m domain
/// with 300 wall segments; wall dimensions and gap statistics are artifact
/// choices exposed here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldGenConfig {
    pub extent: [f64; 3],
    pub wall_count: usize,
    pub wall_thickness_range: (f64, f64),
    pub gap_width_min: f64,
    pub gap_count_per_wall: (usize, usize),
    /// Lateral span range of one formation.
    pub span_range: (f64, f64),
    /// Keep-out margin from the domain boundary for stations and spans.
    pub boundary_margin: f64,
    /// Minimum solid segment width within a formation.
    pub min_segment_width: f64,
    /// Minimum station separation between formations of the same
    /// orientation whose lateral spans overlap.
    pub min_station_separation: f64,
}

impl Default for WorldGenConfig {
    fn default() -> Self {
        Self {
            extent: [100.0, 100.0, 16.0],
            wall_count: 300,
            wall_thickness_range: (0.3, 0.6),
            // Must stay >= 2 * (r + eps) + 0.2 = 1.2 with r = 0.3,
            // eps = 0.2; the default leaves headroom so that shielded
            // planners can actually thread the gaps they see.
            gap_width_min: 1.6,
            gap_count_per_wall: (1, 3),
            span_range: (6.0, 30.0),
            boundary_margin: 2.0,
            min_segment_width: 0.8,
            min_station_separation: 2.0,
        }
    }
}

impl WorldGenConfig {
    fn validate(&self) -> Result<(), WorldError> {
        if !(self.gap_width_min > 0.0) {
            return Err(WorldError::InvalidConfig(
                "gap_width_min must be positive".into(),
            ));
        }
        if self.wall_thickness_range.0 <= 0.0
            || self.wall_thickness_range.1 < self.wall_thickness_range.0
        {
            return Err(WorldError::InvalidConfig(
                "wall_thickness_range must be positive and ordered".into(),
            ));
        }
        if self.gap_count_per_wall.0 > self.gap_count_per_wall.1 {
            return Err(WorldError::InvalidConfig(
                "gap_count_per_wall must be ordered".into(),
            ));
        }
        if self.span_range.0 <= 0.0 || self.span_range.1 < self.span_range.0 {
            return Err(WorldError::InvalidConfig(
                "span_range must be positive and ordered".into(),
            ));
        }
        if self.extent.iter().any(|&e| !(e > 0.0)) {
            return Err(WorldError::InvalidConfig(
                "extent must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One formation as placed by the generator: a station plane plus solid
/// lateral intervals; everything else in the plane is gap.
struct Formation {
    /// 0 = wall normal along x, 1 = wall normal along y.
    axis: usize,
    station: f64,
    half_thickness: f64,
    segments: Vec<(f64, f64)>,
    gap_centers: Vec<Vector3<f64>>,
}

/// Generate a world with exactly `config.wall_count` wall segments grouped
/// into gap-pierced formations. Identical `(config, seed)` pairs produce
/// bit-identical worlds.
pub fn generate_world(config: &WorldGenConfig, seed: u64) -> Result<World, WorldError> {
    config.validate()?;
    let mut world = World::empty(config.extent, seed);
    if config.wall_count == 0 {
        return Ok(world);
    }

    let lateral_limit = config.extent[0].min(config.extent[1]) - 2.0 * config.boundary_margin;
    let span_min = config.span_range.0.min(lateral_limit);
    if span_min < config.gap_width_min + 2.0 * config.min_segment_width {
        return Err(WorldError::InfeasiblePacking(format!(
            "spans of {span_min:.2} m cannot host a {:.2} m gap between two segments",
            config.gap_width_min
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut formations: Vec<Formation> = Vec::new();
    let mut remaining = config.wall_count;
    const MAX_ATTEMPTS: usize = 400;

    while remaining > 0 {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            if let Some(formation) = try_place_formation(config, &mut rng, &formations, remaining) {
                remaining -= formation.segments.len();
                formations.push(formation);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(WorldError::InfeasiblePacking(format!(
                "could not place a formation after {MAX_ATTEMPTS} attempts \
                 ({} of {} segments placed)",
                config.wall_count - remaining,
                config.wall_count
            )));
        }
    }

    for f in &formations {
        let z_center = config.extent[2] / 2.0;
        let z_half = config.extent[2] / 2.0;
        for &(lo, hi) in &f.segments {
            let mid = 0.5 * (lo + hi);
            let half_len = 0.5 * (hi - lo);
            let (center, half) = if f.axis == 0 {
                (
                    [f.station, mid, z_center],
                    [f.half_thickness, half_len, z_half],
                )
            } else {
                (
                    [mid, f.station, z_center],
                    [half_len, f.half_thickness, z_half],
                )
            };
            world.walls.push(Wall {
                center,
                half_extents: half,
            });
        }
    }
    world.validate().map_err(|e| {
        WorldError::InfeasiblePacking(format!("generated wall escaped bounds: {e}"))
    })?;
    Ok(world)
}

fn try_place_formation(
    config: &WorldGenConfig,
    rng: &mut ChaCha8Rng,
    existing: &[Formation],
    remaining: usize,
) -> Option<Formation> {
    let axis = if rng.random_range(0..2u32) == 0 { 0 } else { 1 };
    let lateral_axis = 1 - axis;
    let margin = config.boundary_margin;
    let station = rng.random_range(margin..config.extent[axis] - margin);
    let half_thickness =
        0.5 * rng.random_range(config.wall_thickness_range.0..=config.wall_thickness_range.1);

    // Pick a gap count whose formation fits the remaining segment budget
    // without stranding a lone segment for the *next* formation (a final
    // single-segment formation is still allowed when remaining == 1).
    let (g_lo, g_hi) = config.gap_count_per_wall;
    let gaps = if remaining == 1 {
        0
    } else {
        let candidates: Vec<usize> = (g_lo.max(1)..=g_hi)
            .filter(|&g| g < remaining && remaining - (g + 1) != 1)
            .collect();
        if candidates.is_empty() {
            // Fall back to any budget-respecting count; the remainder-of-one
            // case is handled by a later single-segment formation.
            (g_lo.max(1)..=g_hi).rev().find(|&g| g < remaining)?
        } else {
            candidates[rng.random_range(0..candidates.len())]
        }
    };

    let lateral_extent = config.extent[lateral_axis];
    let max_span = config.span_range.1.min(lateral_extent - 2.0 * margin);
    let needed =
        gaps as f64 * config.gap_width_min + (gaps + 1) as f64 * config.min_segment_width;
    let min_span = config.span_range.0.max(needed).min(max_span);
    if min_span > max_span {
        return None;
    }
    let span = rng.random_range(min_span..=max_span);
    let lo = rng.random_range(margin..=(lateral_extent - margin - span));
    let hi = lo + span;

    // Gap widths then solid segment widths by stick breaking.
    let gap_max = (2.0 * config.gap_width_min)
        .min((span - (gaps + 1) as f64 * config.min_segment_width) / gaps.max(1) as f64);
    let gap_widths: Vec<f64> = (0..gaps)
        .map(|_| rng.random_range(config.gap_width_min..=gap_max.max(config.gap_width_min)))
        .collect();
    let solid_total = span - gap_widths.iter().sum::<f64>();
    let seg_count = gaps + 1;
    let spare = solid_total - seg_count as f64 * config.min_segment_width;
    if spare < 0.0 {
        return None;
    }
    let mut fractions: Vec<f64> = (0..seg_count).map(|_| rng.random_range(0.01..1.0)).collect();
    let fraction_sum: f64 = fractions.iter().sum();
    for f in &mut fractions {
        *f = *f / fraction_sum;
    }

    let mut segments = Vec::with_capacity(seg_count);
    let mut gap_centers = Vec::with_capacity(gaps.max(1));
    let mut cursor = lo;
    for i in 0..seg_count {
        let width = config.min_segment_width + fractions[i] * spare;
        segments.push((cursor, cursor + width));
        cursor += width;
        if i < gaps {
            let gap_mid = cursor + 0.5 * gap_widths[i];
            gap_centers.push(lateral_point(
                axis,
                station,
                gap_mid,
                config.extent[2] / 2.0,
            ));
            cursor += gap_widths[i];
        }
    }
    if gaps == 0 {
        // Single-segment formation: the piercing gap sits beside the span.
        let side = if lo - margin >= config.gap_width_min {
            lo - 0.5 * config.gap_width_min
        } else {
            hi + 0.5 * config.gap_width_min
        };
        gap_centers.push(lateral_point(axis, station, side, config.extent[2] / 2.0));
    }

    let formation = Formation {
        axis,
        station,
        half_thickness,
        segments,
        gap_centers,
    };

    if conflicts(config, existing, &formation) {
        return None;
    }
    Some(formation)
}

fn lateral_point(axis: usize, station: f64, lateral: f64, z: f64) -> Vector3<f64> {
    if axis == 0 {
        Vector3::new(station, lateral, z)
    } else {
        Vector3::new(lateral, station, z)
    }
}

fn conflicts(config: &WorldGenConfig, existing: &[Formation], new: &Formation) -> bool {
    let clearance = 0.5 * config.gap_width_min + 0.2;
    for old in existing {
        // Same-orientation formations keep their station planes apart when
        // their lateral spans overlap.
        if old.axis == new.axis
            && (old.station - new.station).abs() < config.min_station_separation
            && spans_overlap(&old.segments, &new.segments)
        {
            return true;
        }
        // No new wall may sit close to a recorded gap center, and no old
        // wall may sit close to a new gap center; this keeps every gap
        // traversable by a sphere of radius gap_width_min / 2.
        for gap in &old.gap_centers {
            if segment_distance(config, new, gap) < clearance {
                return true;
            }
        }
        for gap in &new.gap_centers {
            if segment_distance(config, old, gap) < clearance {
                return true;
            }
        }
    }
    false
}

fn spans_overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
    let (a_lo, a_hi) = (a.first().unwrap().0, a.last().unwrap().1);
    let (b_lo, b_hi) = (b.first().unwrap().0, b.last().unwrap().1);
    a_lo <= b_hi && b_lo <= a_hi
}

/// Distance from a point to the nearest solid segment of a formation,
/// ignoring the z axis (formations are full height).
fn segment_distance(_config: &WorldGenConfig, f: &Formation, point: &Vector3<f64>) -> f64 {
    let (normal_coord, lateral_coord) = if f.axis == 0 {
        (point.x, point.y)
    } else {
        (point.y, point.x)
    };
    let dn = ((normal_coord - f.station).abs() - f.half_thickness).max(0.0);
    f.segments
        .iter()
        .map(|&(lo, hi)| {
            let dl = if lateral_coord < lo {
                lo - lateral_coord
            } else if lateral_coord > hi {
                lateral_coord - hi
            } else {
                0.0
            };
            (dn * dn + dl * dl).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}
