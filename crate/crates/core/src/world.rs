//! Procedural indoor worlds made of axis-aligned boxes.
//!
//! A world is a floor plane, a set of rooms separated by walls with door
//! gaps, and furniture boxes. It answers height-over-ground and collision
//! queries, renders depth/normal images by ray casting, and discretizes the
//! free space into a [`NavGrid`] for waypoint sampling and path finding.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const WORLD_MAGIC: &str = "turbest-world";
const WORLD_VERSION: u32 = 1;

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|k| self.min[k].is_finite() && self.max[k].is_finite() && self.min[k] < self.max[k])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|k| other.min[k] >= self.min[k] && other.max[k] <= self.max[k])
    }

    /// Closed containment of a point's horizontal projection.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        let d = Vector3::from_fn(|k, _| (self.min[k] - p[k]).max(0.0).max(p[k] - self.max[k]));
        d.norm()
    }

    fn overlaps_xy(&self, other: &Aabb, margin: f64) -> bool {
        self.min.x - margin < other.max.x
            && other.min.x - margin < self.max.x
            && self.min.y - margin < other.max.y
            && other.min.y - margin < self.max.y
    }

    /// Slab test. Returns entry distance and outward normal of the entry
    /// face, or `None` when the ray misses or starts inside.
    pub fn ray_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut axis = 0;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut t0, mut t1) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            if t0 > t_near {
                t_near = t0;
                axis = k;
            }
            t_far = t_far.min(t1);
        }
        if t_near > t_far || t_near <= 0.0 || !t_near.is_finite() {
            return None;
        }
        let mut n = Vector3::zeros();
        n[axis] = -dir[axis].signum();
        Some((t_near, n))
    }
}

/// A static indoor environment.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub bounds: Aabb,
    pub floor_z: f64,
    pub boxes: Vec<Aabb>,
    pub seed: u64,
}

/// Parameters of the procedural generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    /// Inclusive range of room columns along x.
    pub rooms_x: (usize, usize),
    /// Inclusive range of room rows along y.
    pub rooms_y: (usize, usize),
    /// Room side length range (m).
    pub room_size: (f64, f64),
    /// Wall (and world) height (m).
    pub height: f64,
    pub wall_thickness: f64,
    pub door_width: f64,
    /// Expected furniture pieces per m² of room floor.
    pub furniture_density: f64,
    /// Furniture footprint side range (m).
    pub furniture_size: (f64, f64),
    /// Furniture height range (m).
    pub furniture_height: (f64, f64),
    /// Agent radius and clearance height used for the connectivity check.
    pub check_radius: f64,
    pub check_clearance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rooms_x: (1, 3),
            rooms_y: (1, 2),
            room_size: (3.0, 5.0),
            height: 3.0,
            wall_thickness: 0.1,
            door_width: 1.0,
            furniture_density: 0.15,
            furniture_size: (0.4, 1.6),
            furniture_height: (0.2, 1.2),
            check_radius: 0.2,
            check_clearance: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.rooms_x.0 >= 1
            && self.rooms_x.0 <= self.rooms_x.1
            && self.rooms_y.0 >= 1
            && self.rooms_y.0 <= self.rooms_y.1
            && self.room_size.0 > 0.0
            && self.room_size.0 <= self.room_size.1
            && self.wall_thickness > 0.0
            && self.door_width > 0.0
            && self.door_width + 2.0 * self.wall_thickness < self.room_size.0
            && self.furniture_density >= 0.0
            && self.furniture_size.0 > 0.0
            && self.furniture_size.0 <= self.furniture_size.1
            && self.furniture_height.0 > 0.0
            && self.furniture_height.0 <= self.furniture_height.1
            && self.furniture_height.1 < self.height
            && self.check_radius > 0.0
            && self.check_clearance > 0.0
            && self.check_clearance < self.height;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("inconsistent world config: {self:?}")))
        }
    }
}

/// Minimum connected navigable area of a generated world (m²).
pub const MIN_NAVIGABLE_AREA: f64 = 4.0;
const MAX_GENERATION_ATTEMPTS: usize = 10;

/// Deterministic procedural world for `seed`.
pub fn generate_world(seed: u64, config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let mut reason = String::new();
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let world = layout(seed, config, &mut rng);
        let nav = build_navgrid(&world, config.check_radius, config.check_clearance, DEFAULT_CELL_SIZE)?;
        let area = nav.largest_component_area();
        if area >= MIN_NAVIGABLE_AREA {
            return Ok(world);
        }
        reason = format!("largest navigable region {area:.2} m²");
    }
    Err(Error::WorldGeneration {
        attempts: MAX_GENERATION_ATTEMPTS,
        reason,
    })
}

fn layout(seed: u64, cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> World {
    let nx = rng.random_range(cfg.rooms_x.0..=cfg.rooms_x.1);
    let ny = rng.random_range(cfg.rooms_y.0..=cfg.rooms_y.1);
    let sample_len = |rng: &mut ChaCha8Rng| {
        if cfg.room_size.0 == cfg.room_size.1 {
            cfg.room_size.0
        } else {
            rng.random_range(cfg.room_size.0..cfg.room_size.1)
        }
    };
    let widths: Vec<f64> = (0..nx).map(|_| sample_len(rng)).collect();
    let depths: Vec<f64> = (0..ny).map(|_| sample_len(rng)).collect();
    let xs: Vec<f64> = std::iter::once(0.0)
        .chain(widths.iter().scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        }))
        .collect();
    let ys: Vec<f64> = std::iter::once(0.0)
        .chain(depths.iter().scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        }))
        .collect();
    let (w_total, d_total) = (xs[nx], ys[ny]);
    let h = cfg.height;
    let t = cfg.wall_thickness;
    let bounds = Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(w_total, d_total, h));
    let mut boxes = vec![
        Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(w_total, t, h)),
        Aabb::new(Vector3::new(0.0, d_total - t, 0.0), Vector3::new(w_total, d_total, h)),
        Aabb::new(Vector3::new(0.0, t, 0.0), Vector3::new(t, d_total - t, h)),
        Aabb::new(Vector3::new(w_total - t, t, 0.0), Vector3::new(w_total, d_total - t, h)),
    ];
    let mut doors: Vec<Vector2<f64>> = Vec::new();
    let half = t / 2.0;
    // walls at interior x boundaries, one segment per room row, with a door
    for i in 1..nx {
        let x = xs[i];
        for j in 0..ny {
            let (y0, y1) = (ys[j] + t, ys[j + 1] - t);
            let span = y1 - y0 - cfg.door_width;
            let dy = y0 + rng.random_range(0.0..span.max(1e-9));
            doors.push(Vector2::new(x, dy + cfg.door_width / 2.0));
            push_wall(&mut boxes, [x - half, y0, x + half, dy], h);
            push_wall(&mut boxes, [x - half, dy + cfg.door_width, x + half, y1], h);
        }
    }
    for j in 1..ny {
        let y = ys[j];
        for i in 0..nx {
            let (x0, x1) = (xs[i] + t, xs[i + 1] - t);
            let span = x1 - x0 - cfg.door_width;
            let dx = x0 + rng.random_range(0.0..span.max(1e-9));
            doors.push(Vector2::new(dx + cfg.door_width / 2.0, y));
            push_wall(&mut boxes, [x0, y - half, dx, y + half], h);
            push_wall(&mut boxes, [dx + cfg.door_width, y - half, x1, y + half], h);
        }
    }
    let walls = boxes.len();
    for i in 0..nx {
        for j in 0..ny {
            let (x0, x1, y0, y1) = (xs[i] + t, xs[i + 1] - t, ys[j] + t, ys[j + 1] - t);
            let area = (x1 - x0) * (y1 - y0);
            let expected = cfg.furniture_density * area;
            let count = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
            for _ in 0..count {
                for _try in 0..20 {
                    let sx = rng.random_range(cfg.furniture_size.0..=cfg.furniture_size.1);
                    let sy = rng.random_range(cfg.furniture_size.0..=cfg.furniture_size.1);
                    let hz = rng.random_range(cfg.furniture_height.0..=cfg.furniture_height.1);
                    if sx >= x1 - x0 || sy >= y1 - y0 {
                        continue;
                    }
                    let bx = rng.random_range(x0..x1 - sx);
                    let by = rng.random_range(y0..y1 - sy);
                    let candidate = Aabb::new(Vector3::new(bx, by, 0.0), Vector3::new(bx + sx, by + sy, hz));
                    let near_door = doors
                        .iter()
                        .any(|d| candidate.distance(&Vector3::new(d.x, d.y, 0.0)) < cfg.door_width);
                    let overlaps = boxes[walls..].iter().any(|b| b.overlaps_xy(&candidate, 0.1));
                    if !near_door && !overlaps {
                        boxes.push(candidate);
                        break;
                    }
                }
            }
        }
    }
    World {
        bounds,
        floor_z: 0.0,
        boxes,
        seed,
    }
}

fn push_wall(boxes: &mut Vec<Aabb>, [x0, y0, x1, y1]: [f64; 4], h: f64) {
    if x1 - x0 > 1e-9 && y1 - y0 > 1e-9 {
        boxes.push(Aabb::new(Vector3::new(x0, y0, 0.0), Vector3::new(x1, y1, h)));
    }
}

impl World {
    /// Builds a world from explicit geometry.
    pub fn new(bounds: Aabb, floor_z: f64, boxes: Vec<Aabb>, seed: u64) -> Result<Self> {
        if !bounds.is_valid() {
            return Err(Error::invalid("world bounds must be a non-empty box"));
        }
        if !(floor_z >= bounds.min.z && floor_z < bounds.max.z) {
            return Err(Error::invalid("floor must lie inside the vertical bounds"));
        }
        for (i, b) in boxes.iter().enumerate() {
            if !b.is_valid() || !bounds.contains_box(b) {
                return Err(Error::invalid(format!("box {i} is empty or outside the world bounds")));
            }
        }
        Ok(Self {
            bounds,
            floor_z,
            boxes,
            seed,
        })
    }

    fn inside_xy(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.bounds.min.x && p.x <= self.bounds.max.x && p.y >= self.bounds.min.y && p.y <= self.bounds.max.y
    }

    /// Height of the highest surface at or below `z` under `(x, y)`.
    pub fn surface_below(&self, x: f64, y: f64, z: f64) -> f64 {
        self.boxes
            .iter()
            .filter(|b| b.max.z <= z && b.contains_xy(x, y))
            .map(|b| b.max.z)
            .fold(self.floor_z, f64::max)
    }

    /// Vertical distance from `p` to the first surface below it.
    pub fn height_over_ground(&self, p: &Vector3<f64>) -> Result<f64> {
        if !(self.inside_xy(p) && p.z > self.floor_z && p.z <= self.bounds.max.z) {
            return Err(Error::Domain(format!("point {:?} is outside the world", p.as_slice())));
        }
        Ok(p.z - self.surface_below(p.x, p.y, p.z))
    }

    /// True iff a closed sphere at `p` touches a box, the floor, or the
    /// world boundary.
    pub fn check_collision(&self, p: &Vector3<f64>, radius: f64) -> bool {
        if p.z - radius <= self.floor_z {
            return true;
        }
        for k in 0..3 {
            if p[k] - radius <= self.bounds.min[k] || p[k] + radius >= self.bounds.max[k] {
                return true;
            }
        }
        self.boxes.iter().any(|b| b.distance(p) <= radius)
    }

    /// First hit along a ray: distance and world-frame face normal.
    pub fn cast_ray(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        if dir.z < 0.0 && origin.z > self.floor_z {
            best = Some(((self.floor_z - origin.z) / dir.z, Vector3::z()));
        }
        for b in &self.boxes {
            if let Some((t, n)) = b.ray_hit(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, n));
                }
            }
        }
        best
    }

    /// Text manifest: magic and version line, then seed, floor, bounds and
    /// one line per box. Floats use shortest round-trip formatting.
    pub fn to_manifest(&self) -> String {
        let mut s = format!("{WORLD_MAGIC} {WORLD_VERSION}\n");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "floor_z {:?}", self.floor_z);
        let _ = writeln!(s, "bounds {}", fmt_box(&self.bounds));
        let _ = writeln!(s, "boxes {}", self.boxes.len());
        for b in &self.boxes {
            let _ = writeln!(s, "{}", fmt_box(b));
        }
        s
    }

    pub fn from_manifest(text: &str) -> Result<Self> {
        let ctx = "world manifest";
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l))
                .ok_or_else(|| Error::format(ctx, format!("missing {what}")))
        };
        let (_, header) = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(WORLD_MAGIC) {
            return Err(Error::format(ctx, "bad magic"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(ctx, "missing version"))?;
        if version != WORLD_VERSION {
            return Err(Error::format(ctx, format!("unsupported version {version}")));
        }
        let seed: u64 = keyed(next("seed")?, "seed", ctx)?
            .parse()
            .map_err(|_| Error::format(ctx, "bad seed"))?;
        let floor_z = parse_f64s(next("floor_z")?, "floor_z", 1, ctx)?[0];
        let bounds = to_box(&parse_f64s(next("bounds")?, "bounds", 6, ctx)?);
        let n: usize = keyed(next("boxes")?, "boxes", ctx)?
            .parse()
            .map_err(|_| Error::format(ctx, "bad box count"))?;
        let mut boxes = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, line) = next("box")?;
            let vals = parse_floats(line).map_err(|m| Error::format(format!("{ctx} line {ln}"), m))?;
            if vals.len() != 6 {
                return Err(Error::format(format!("{ctx} line {ln}"), "expected 6 values"));
            }
            boxes.push(to_box(&vals));
        }
        World::new(bounds, floor_z, boxes, seed)
    }
}

fn fmt_box(b: &Aabb) -> String {
    format!(
        "{:?} {:?} {:?} {:?} {:?} {:?}",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    )
}

fn to_box(v: &[f64]) -> Aabb {
    Aabb::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
}

fn keyed<'a>((ln, line): (usize, &'a str), key: &str, ctx: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .map(str::trim)
        .ok_or_else(|| Error::format(format!("{ctx} line {ln}"), format!("expected '{key}'")))
}

fn parse_floats(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn parse_f64s(line: (usize, &str), key: &str, n: usize, ctx: &str) -> Result<Vec<f64>> {
    let ln = line.0;
    let vals = parse_floats(keyed(line, key, ctx)?).map_err(|m| Error::format(format!("{ctx} line {ln}"), m))?;
    if vals.len() != n {
        return Err(Error::format(format!("{ctx} line {ln}"), format!("expected {n} values")));
    }
    Ok(vals)
}

/// Pinhole camera model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Vertical field of view (rad).
    pub fov_y: f64,
    /// Range ceiling and miss sentinel (m).
    pub max_depth: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            fov_y: 1.0,
            max_depth: 10.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("camera resolution must be at least 8x8"));
        }
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(Error::invalid("camera fov must lie in (0, pi)"));
        }
        if !(self.max_depth > 0.0 && self.max_depth.is_finite()) {
            return Err(Error::invalid("max depth must be positive"));
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray through the center of pixel `(row, col)` in the camera
    /// frame (x right, y up, looking along −z).
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let tan_half = (self.fov_y / 2.0).tan();
        let aspect = self.width as f64 / self.height as f64;
        let u = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan_half * aspect;
        let v = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * tan_half;
        Vector3::new(u, v, -1.0).normalize()
    }
}

/// Camera placement: position and camera-to-world rotation. The camera
/// frame has x right, y up, and looks along −z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    /// Camera looking along world direction `forward` with the given
    /// approximate up vector.
    pub fn looking(position: Vector3<f64>, forward: Vector3<f64>, up: Vector3<f64>) -> Self {
        let back = -forward.normalize();
        let right = up.cross(&back).normalize();
        let true_up = back.cross(&right);
        let m = Matrix3::from_columns(&[right, true_up, back]);
        Self {
            position,
            orientation: UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)),
        }
    }

    /// Forward-facing camera on a vehicle body (x forward, y left, z up),
    /// pitched down by `pitch_down` radians.
    pub fn from_body(position: Vector3<f64>, attitude: &UnitQuaternion<f64>, pitch_down: f64) -> Self {
        let (s, c) = pitch_down.sin_cos();
        let m = Matrix3::from_columns(&[
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(s, 0.0, c),
            Vector3::new(-c, 0.0, s),
        ]);
        let body_from_cam = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        Self {
            position,
            orientation: attitude * body_from_cam,
        }
    }
}

/// Default downward pitch of the forward camera (rad).
pub const DEFAULT_CAMERA_PITCH: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Range image, row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Camera-frame unit normals, row-major, 3 values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl NormalImage {
    pub fn at(&self, row: usize, col: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    /// Channel-major layout `[3, H, W]`.
    pub fn to_planar(&self) -> Vec<f64> {
        let n = self.width * self.height;
        let mut out = vec![0.0; 3 * n];
        for (i, v) in self.data.iter().enumerate() {
            for c in 0..3 {
                out[c * n + i] = v[c];
            }
        }
        out
    }
}

/// Normal reported for pixels with no hit within range.
pub const MISS_NORMAL: [f64; 3] = [0.0, 0.0, 1.0];

/// Renders depth and normals in one pass.
pub fn render(world: &World, pose: &CameraPose, k: &CameraIntrinsics) -> (DepthImage, NormalImage) {
    let rot = pose.orientation;
    let inv = rot.inverse();
    let mut depth = Vec::with_capacity(k.pixels());
    let mut normals = Vec::with_capacity(k.pixels());
    for row in 0..k.height {
        for col in 0..k.width {
            let dir = rot * k.pixel_ray(row, col);
            match world.cast_ray(&pose.position, &dir) {
                Some((t, n)) if t <= k.max_depth => {
                    depth.push(t);
                    let nc = inv * n;
                    normals.push([nc.x, nc.y, nc.z]);
                }
                _ => {
                    depth.push(k.max_depth);
                    normals.push(MISS_NORMAL);
                }
            }
        }
    }
    (
        DepthImage {
            width: k.width,
            height: k.height,
            data: depth,
        },
        NormalImage {
            width: k.width,
            height: k.height,
            data: normals,
        },
    )
}

pub fn render_depth(world: &World, pose: &CameraPose, k: &CameraIntrinsics) -> DepthImage {
    render(world, pose, k).0
}

pub fn render_normals(world: &World, pose: &CameraPose, k: &CameraIntrinsics) -> NormalImage {
    render(world, pose, k).1
}

pub const DEFAULT_CELL_SIZE: f64 = 0.25;

/// Navigable cells at a fixed flight height.
#[derive(Debug, Clone, PartialEq)]
pub struct NavGrid {
    pub cell_size: f64,
    pub origin: Vector2<f64>,
    pub nx: usize,
    pub ny: usize,
    pub clearance: f64,
    pub agent_radius: f64,
    /// Row-major by y then x: index `j * nx + i`.
    pub navigable: Vec<bool>,
}

pub type Cell = (usize, usize);

/// Marks every cell whose center, at `clearance` height, is free for a
/// sphere of `agent_radius`.
pub fn build_navgrid(world: &World, agent_radius: f64, clearance: f64, cell_size: f64) -> Result<NavGrid> {
    if !(agent_radius > 0.0 && cell_size > 0.0) {
        return Err(Error::invalid("agent radius and cell size must be positive"));
    }
    let origin = Vector2::new(world.bounds.min.x, world.bounds.min.y);
    let nx = ((world.bounds.max.x - origin.x) / cell_size).ceil() as usize;
    let ny = ((world.bounds.max.y - origin.y) / cell_size).ceil() as usize;
    let mut navigable = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = Vector3::new(
                origin.x + (i as f64 + 0.5) * cell_size,
                origin.y + (j as f64 + 0.5) * cell_size,
                clearance,
            );
            navigable.push(!world.check_collision(&c, agent_radius));
        }
    }
    Ok(NavGrid {
        cell_size,
        origin,
        nx,
        ny,
        clearance,
        agent_radius,
        navigable,
    })
}

#[derive(Copy, Clone, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, ties broken by index for determinism
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NavGrid {
    pub fn is_navigable(&self, (i, j): Cell) -> bool {
        i < self.nx && j < self.ny && self.navigable[j * self.nx + i]
    }

    pub fn center(&self, (i, j): Cell) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + (i as f64 + 0.5) * self.cell_size,
            self.origin.y + (j as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn cell_of(&self, p: &Vector2<f64>) -> Option<Cell> {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (i, j) = (fx as usize, fy as usize);
        (i < self.nx && j < self.ny).then_some((i, j))
    }

    pub fn navigable_cells(&self) -> Vec<Cell> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .filter(|&c| self.is_navigable(c))
            .collect()
    }

    /// 8-connected moves that do not cut blocked corners.
    pub fn neighbors(&self, (i, j): Cell) -> impl Iterator<Item = (Cell, f64)> + '_ {
        const STEPS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let (ni, nj) = (i as i64 + dx, j as i64 + dy);
            if ni < 0 || nj < 0 {
                return None;
            }
            let n = (ni as usize, nj as usize);
            if !self.is_navigable(n) {
                return None;
            }
            if dx != 0 && dy != 0 && !(self.is_navigable((n.0, j)) && self.is_navigable((i, n.1))) {
                return None;
            }
            let cost = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 } * self.cell_size;
            Some((n, cost))
        })
    }

    /// Connected components of navigable cells (8-connectivity as in
    /// [`NavGrid::neighbors`]); returns a label per cell, `usize::MAX` for
    /// blocked cells.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.nx * self.ny];
        let mut next = 0;
        for start in self.navigable_cells() {
            let si = start.1 * self.nx + start.0;
            if label[si] != usize::MAX {
                continue;
            }
            label[si] = next;
            let mut stack = vec![start];
            while let Some(c) = stack.pop() {
                for (n, _) in self.neighbors(c) {
                    let ni = n.1 * self.nx + n.0;
                    if label[ni] == usize::MAX {
                        label[ni] = next;
                        stack.push(n);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Area of the largest connected navigable region (m²).
    pub fn largest_component_area(&self) -> f64 {
        let labels = self.components();
        let mut counts = std::collections::BTreeMap::<usize, usize>::new();
        for l in labels.into_iter().filter(|&l| l != usize::MAX) {
            *counts.entry(l).or_default() += 1;
        }
        counts.values().copied().max().unwrap_or(0) as f64 * self.cell_size * self.cell_size
    }

    /// A* over the grid with a Euclidean heuristic. Returns cell centers
    /// from `a` to `b` inclusive.
    pub fn shortest_path(&self, a: Cell, b: Cell) -> Result<Vec<Vector2<f64>>> {
        Ok(self.shortest_path_cells(a, b)?.into_iter().map(|c| self.center(c)).collect())
    }

    pub fn shortest_path_cells(&self, a: Cell, b: Cell) -> Result<Vec<Cell>> {
        if !self.is_navigable(a) || !self.is_navigable(b) {
            return Err(Error::invalid(format!("path endpoints {a:?} -> {b:?} must be navigable")));
        }
        let n = self.nx * self.ny;
        let idx = |c: Cell| c.1 * self.nx + c.0;
        let h = |c: Cell| (self.center(c) - self.center(b)).norm();
        let mut g = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let mut open = BinaryHeap::new();
        g[idx(a)] = 0.0;
        open.push(Open { f: h(a), g: 0.0, idx: idx(a) });
        while let Some(Open { g: gc, idx: ci, .. }) = open.pop() {
            if closed[ci] {
                continue;
            }
            closed[ci] = true;
            if ci == idx(b) {
                let mut path = vec![b];
                let mut cur = ci;
                while parent[cur] != usize::MAX {
                    cur = parent[cur];
                    path.push((cur % self.nx, cur / self.nx));
                }
                path.reverse();
                return Ok(path);
            }
            let c = (ci % self.nx, ci / self.nx);
            for (nb, cost) in self.neighbors(c) {
                let ni = idx(nb);
                let tentative = gc + cost;
                if tentative < g[ni] {
                    g[ni] = tentative;
                    parent[ni] = ci;
                    open.push(Open {
                        f: tentative + h(nb),
                        g: tentative,
                        idx: ni,
                    });
                }
            }
        }
        Err(Error::NoPath { from: a, to: b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::VecDeque;

    fn empty_room() -> World {
        World::new(
            Aabb::new(Vector3::new(-5.0, -5.0, 0.0), Vector3::new(5.0, 5.0, 3.0)),
            0.0,
            vec![],
            0,
        )
        .unwrap()
    }

    fn room_with_table() -> World {
        let mut w = empty_room();
        w.boxes.push(Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 1.0, 0.5)));
        w
    }

    /// Two 4×4 rooms side by side, joined by a single door at y ∈ [1.5, 2.5].
    fn two_rooms() -> World {
        let h = 3.0;
        let b = |x0: f64, y0: f64, x1: f64, y1: f64| Aabb::new(Vector3::new(x0, y0, 0.0), Vector3::new(x1, y1, h));
        World::new(
            b(0.0, 0.0, 8.0, 4.0),
            0.0,
            vec![b(3.95, 0.0, 4.05, 1.5), b(3.95, 2.5, 4.05, 4.0)],
            0,
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorldConfig::default();
        let a = generate_world(0, &cfg).unwrap();
        let b = generate_world(0, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_manifest(), b.to_manifest());
    }

    #[test]
    fn seeds_produce_different_worlds() {
        let cfg = WorldConfig::default();
        for s in 0..100u64 {
            let a = generate_world(2 * s, &cfg).unwrap();
            let b = generate_world(2 * s + 1, &cfg).unwrap();
            assert_ne!(a.boxes, b.boxes, "seeds {} and {}", 2 * s, 2 * s + 1);
        }
    }

    #[test]
    fn zero_density_has_only_walls() {
        let cfg = WorldConfig {
            furniture_density: 0.0,
            ..WorldConfig::default()
        };
        let w = generate_world(3, &cfg).unwrap();
        assert!(w.boxes.iter().all(|b| b.max.z == cfg.height && b.min.z == 0.0));
        let nav = build_navgrid(&w, 0.2, 1.0, DEFAULT_CELL_SIZE).unwrap();
        // every free cell is at least radius away from a wall
        for c in nav.navigable_cells() {
            let p = nav.center(c);
            assert!(!w.check_collision(&Vector3::new(p.x, p.y, 1.0), 0.2));
        }
        assert!(nav.largest_component_area() >= MIN_NAVIGABLE_AREA);
    }

    #[test]
    fn generated_worlds_satisfy_invariants() {
        for seed in 0..20 {
            let w = generate_world(seed, &WorldConfig::default()).unwrap();
            assert!(w.boxes.iter().all(|b| w.bounds.contains_box(b)));
            let back = World::from_manifest(&w.to_manifest()).unwrap();
            assert_eq!(back, w);
        }
    }

    #[test]
    fn height_queries() {
        let w = room_with_table();
        assert_eq!(empty_room().height_over_ground(&Vector3::new(1.0, 1.0, 1.5)).unwrap(), 1.5);
        assert_eq!(w.height_over_ground(&Vector3::new(0.5, 0.5, 1.5)).unwrap(), 1.0);
        let past_edge = w.height_over_ground(&Vector3::new(1.0 + 1e-6, 0.5, 1.5)).unwrap();
        assert_eq!(past_edge, 1.5);
        assert!(w.height_over_ground(&Vector3::new(6.0, 0.0, 1.0)).is_err());
        assert!(w.height_over_ground(&Vector3::new(0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn collision_queries() {
        let w = room_with_table();
        assert!(!w.check_collision(&Vector3::new(-2.0, -2.0, 1.5), 0.1));
        assert!(w.check_collision(&Vector3::new(0.5, 0.5, 0.25), 0.1));
        // exactly radius above the table top: closed surface counts
        assert!(w.check_collision(&Vector3::new(0.5, 0.5, 0.75), 0.25));
        assert!(!w.check_collision(&Vector3::new(0.5, 0.5, 0.75 + 1e-9), 0.25));
        // past a corner: distance is the diagonal
        let corner = Vector3::new(1.0 + 0.3, 1.0 + 0.4, 0.75);
        let r = (0.3f64 * 0.3 + 0.4 * 0.4 + 0.25 * 0.25).sqrt();
        assert!(w.check_collision(&corner, r + 1e-12));
        assert!(!w.check_collision(&corner, r - 1e-9));
        assert!(w.check_collision(&Vector3::new(4.95, 0.0, 1.0), 0.1));
        assert!(w.check_collision(&Vector3::new(0.0, 0.0, 0.05), 0.1));
    }

    #[test]
    fn downward_camera_sees_floor() {
        let k = CameraIntrinsics {
            width: 33,
            height: 33,
            ..CameraIntrinsics::default()
        };
        let pose = CameraPose::looking(Vector3::new(0.0, 0.0, 1.0), -Vector3::z(), Vector3::x());
        let (d, n) = render(&empty_room(), &pose, &k);
        assert_relative_eq!(d.at(16, 16), 1.0, epsilon = 1e-12);
        let c = n.at(16, 16);
        assert_relative_eq!(c[2], 1.0, epsilon = 1e-12);
        assert!(c[0].abs() < 1e-12 && c[1].abs() < 1e-12);
    }

    #[test]
    fn tilted_camera_depth_scales() {
        let k = CameraIntrinsics {
            width: 33,
            height: 33,
            ..CameraIntrinsics::default()
        };
        let fwd = Vector3::new(1.0, 0.0, -1.0);
        let pose = CameraPose::looking(Vector3::new(0.0, 0.0, 1.2), fwd, Vector3::z());
        let d = render_depth(&empty_room(), &pose, &k);
        assert_relative_eq!(d.at(16, 16), 2f64.sqrt() * 1.2, epsilon = 1e-9);
    }

    #[test]
    fn open_sky_is_sentinel() {
        let k = CameraIntrinsics::default();
        let world = World::new(
            Aabb::new(Vector3::new(-100.0, -100.0, 0.0), Vector3::new(100.0, 100.0, 50.0)),
            0.0,
            vec![],
            0,
        )
        .unwrap();
        let pose = CameraPose::looking(Vector3::new(0.0, 0.0, 1.0), Vector3::z(), Vector3::x());
        let (d, n) = render(&world, &pose, &k);
        assert!(d.data.iter().all(|&v| v == k.max_depth));
        assert!(n.data.iter().all(|&v| v == MISS_NORMAL));
    }

    #[test]
    fn rendered_normals_are_unit_and_front_facing() {
        let w = generate_world(5, &WorldConfig::default()).unwrap();
        let k = CameraIntrinsics::default();
        let c = w.bounds.min + (w.bounds.max - w.bounds.min) * 0.5;
        let pose = CameraPose::from_body(
            Vector3::new(c.x, c.y, 1.3),
            &UnitQuaternion::from_euler_angles(0.1, -0.05, 0.7),
            DEFAULT_CAMERA_PITCH,
        );
        let (d, n) = render(&w, &pose, &k);
        for row in 0..k.height {
            for col in 0..k.width {
                let nv = Vector3::from(n.at(row, col));
                assert!((nv.norm() - 1.0).abs() < 1e-6);
                let depth = d.at(row, col);
                assert!(depth > 0.0 && depth <= k.max_depth);
                if depth < k.max_depth {
                    assert!(nv.dot(&k.pixel_ray(row, col)) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn body_camera_looks_forward_and_down() {
        let pose = CameraPose::from_body(Vector3::zeros(), &UnitQuaternion::identity(), DEFAULT_CAMERA_PITCH);
        let axis = pose.orientation * -Vector3::z();
        assert_relative_eq!(axis.x, DEFAULT_CAMERA_PITCH.cos(), epsilon = 1e-12);
        assert_relative_eq!(axis.z, -DEFAULT_CAMERA_PITCH.sin(), epsilon = 1e-12);
        let right = pose.orientation * Vector3::x();
        assert_relative_eq!(right.y, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn straight_path_in_empty_room() {
        let w = empty_room();
        let nav = build_navgrid(&w, 0.2, 1.0, 0.25).unwrap();
        let a = nav.cell_of(&Vector2::new(-3.0, -3.0)).unwrap();
        let b = nav.cell_of(&Vector2::new(3.0, 2.0)).unwrap();
        let path = nav.shortest_path(a, b).unwrap();
        let len: f64 = path.windows(2).map(|p| (p[1] - p[0]).norm()).sum();
        let euclid = (nav.center(b) - nav.center(a)).norm();
        assert!(len - euclid <= nav.cell_size * std::f64::consts::SQRT_2);
        assert_eq!(nav.shortest_path(a, a).unwrap().len(), 1);
    }

    fn bfs_connected(nav: &NavGrid, a: Cell, b: Cell, blocked: &[Cell]) -> bool {
        let mut seen = vec![false; nav.nx * nav.ny];
        let mut q = VecDeque::from([a]);
        seen[a.1 * nav.nx + a.0] = true;
        while let Some(c) = q.pop_front() {
            if c == b {
                return true;
            }
            for (n, _) in nav.neighbors(c) {
                let i = n.1 * nav.nx + n.0;
                if !seen[i] && !blocked.contains(&n) {
                    seen[i] = true;
                    q.push_back(n);
                }
            }
        }
        false
    }

    #[test]
    fn path_threads_the_door() {
        let w = two_rooms();
        let nav = build_navgrid(&w, 0.2, 1.0, 0.25).unwrap();
        let a = nav.cell_of(&Vector2::new(1.0, 0.6)).unwrap();
        let b = nav.cell_of(&Vector2::new(7.0, 3.4)).unwrap();
        let path = nav.shortest_path_cells(a, b).unwrap();
        // door cells: navigable cells in the wall's column band
        let door: Vec<Cell> = nav
            .navigable_cells()
            .into_iter()
            .filter(|&c| (nav.center(c).x - 4.0).abs() < 0.2)
            .collect();
        assert!(!door.is_empty());
        assert!(!bfs_connected(&nav, a, b, &door), "door cells must separate the rooms");
        assert!(path.iter().any(|c| door.contains(c)));
        for c in &path {
            assert!(nav.is_navigable(*c));
        }
    }

    #[test]
    fn disconnected_cells_have_no_path() {
        let h = 3.0;
        let b = |x0: f64, y0: f64, x1: f64, y1: f64| Aabb::new(Vector3::new(x0, y0, 0.0), Vector3::new(x1, y1, h));
        let w = World::new(b(0.0, 0.0, 8.0, 4.0), 0.0, vec![b(3.95, 0.0, 4.05, 4.0)], 0).unwrap();
        let nav = build_navgrid(&w, 0.2, 1.0, 0.25).unwrap();
        let a = nav.cell_of(&Vector2::new(1.0, 1.0)).unwrap();
        let z = nav.cell_of(&Vector2::new(7.0, 1.0)).unwrap();
        assert!(matches!(nav.shortest_path(a, z), Err(Error::NoPath { .. })));
    }

    #[test]
    fn manifest_rejects_garbage() {
        assert!(World::from_manifest("nope 1\n").is_err());
        let w = empty_room();
        let text = w.to_manifest().replace("turbest-world 1", "turbest-world 9");
        assert!(World::from_manifest(&text).is_err());
        let text = w.to_manifest().replace("boxes 0", "boxes 1");
        assert!(World::from_manifest(&text).is_err());
    }
}
