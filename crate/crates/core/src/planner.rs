//! Reference trajectories and closed-loop tracking.
//!
//! Waypoints are drawn from a [`NavGrid`], ordered by a Christofides tour,
//! joined by wall-avoiding polylines, and flown by a cascaded PD controller
//! whose rollout records depth frames, height over ground and the injected
//! ground-effect force.

use nalgebra::{DMatrix, Matrix3, Matrix4, Matrix4xX, UnitQuaternion, Vector2, Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{self, DroneParams, RotorCommand, State, WrenchInput, GRAVITY};
use crate::error::{Error, Result};
use crate::groundfx::{cheeseman, GroundEffectParams};
use crate::world::{render_depth, CameraIntrinsics, CameraPose, NavGrid, World, DEFAULT_CAMERA_PITCH};

/// `k` distinct navigable cell centers, uniform without replacement.
pub fn sample_waypoints(nav: &NavGrid, k: usize, seed: u64) -> Result<Vec<Vector2<f64>>> {
    let cells = nav.navigable_cells();
    if k == 0 || k > cells.len() {
        return Err(Error::invalid(format!(
            "cannot sample {k} waypoints from {} navigable cells",
            cells.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, cells.len(), k)
        .into_iter()
        .map(|i| nav.center(cells[i]))
        .collect())
}

/// Odd sets up to this size are matched exactly.
pub const EXACT_MATCHING_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    /// Visiting order, starting at vertex 0.
    pub order: Vec<usize>,
    /// Length of the closed tour.
    pub length: f64,
    /// False when the greedy matching fallback was used, which voids the
    /// 1.5 approximation bound.
    pub exact_matching: bool,
}

/// Closed tour length of `order` under `metric`.
pub fn tour_length(metric: &DMatrix<f64>, order: &[usize]) -> f64 {
    if order.len() < 2 {
        return 0.0;
    }
    (0..order.len())
        .map(|i| metric[(order[i], order[(i + 1) % order.len()])])
        .sum()
}

/// Pairwise Euclidean distances.
pub fn euclidean_metric(points: &[Vector2<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), points.len(), |i, j| (points[i] - points[j]).norm())
}

/// Pairwise shortest-path lengths on the grid. Points must be navigable.
pub fn navgrid_metric(nav: &NavGrid, points: &[Vector2<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let cells = points
        .iter()
        .map(|p| nav.cell_of(p).ok_or_else(|| Error::invalid("waypoint outside the grid")))
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let path = nav.shortest_path(cells[i], cells[j])?;
            let len: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
            m[(i, j)] = len;
            m[(j, i)] = len;
        }
    }
    Ok(m)
}

/// Christofides heuristic: Prim MST, minimum-weight perfect matching on
/// the odd-degree vertices, Eulerian circuit, shortcutting.
pub fn christofides(metric: &DMatrix<f64>) -> Result<Tour> {
    let n = metric.nrows();
    if n == 0 || metric.ncols() != n {
        return Err(Error::invalid("metric must be a non-empty square matrix"));
    }
    let scale = metric.amax().max(1.0);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (metric[(i, j)], metric[(j, i)]);
            if !a.is_finite() || a < 0.0 || (a - b).abs() > 1e-12 * scale {
                return Err(Error::invalid(format!("metric is not symmetric non-negative at ({i}, {j})")));
            }
        }
    }
    if n <= 2 {
        let order: Vec<usize> = (0..n).collect();
        return Ok(Tour {
            length: tour_length(metric, &order),
            order,
            exact_matching: true,
        });
    }

    let mut edges = prim_mst(metric);
    let mut degree = vec![0usize; n];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
    }
    let odd: Vec<usize> = (0..n).filter(|&v| degree[v] % 2 == 1).collect();
    let exact = odd.len() <= EXACT_MATCHING_LIMIT;
    let matching = if exact {
        exact_matching(metric, &odd)
    } else {
        greedy_matching(metric, &odd)
    };
    edges.extend(matching);

    let circuit = euler_circuit(n, &edges);
    let mut seen = vec![false; n];
    let order: Vec<usize> = circuit
        .into_iter()
        .filter(|&v| !std::mem::replace(&mut seen[v], true))
        .collect();
    Ok(Tour {
        length: tour_length(metric, &order),
        order,
        exact_matching: exact,
    })
}

fn prim_mst(metric: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = metric.nrows();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut edges = Vec::with_capacity(n - 1);
    best[0] = 0.0;
    for _ in 0..n {
        let u = (0..n)
            .filter(|&v| !in_tree[v])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]))
            .expect("vertices remain");
        in_tree[u] = true;
        if parent[u] != usize::MAX {
            edges.push((parent[u], u));
        }
        for v in 0..n {
            if !in_tree[v] && metric[(u, v)] < best[v] {
                best[v] = metric[(u, v)];
                parent[v] = u;
            }
        }
    }
    edges
}

/// Exact minimum-weight perfect matching by dynamic programming over
/// subsets, always pairing the lowest unmatched vertex.
fn exact_matching(metric: &DMatrix<f64>, odd: &[usize]) -> Vec<(usize, usize)> {
    let k = odd.len();
    let full = (1usize << k) - 1;
    let mut cost = vec![f64::INFINITY; 1 << k];
    let mut choice = vec![(0usize, 0usize); 1 << k];
    cost[0] = 0.0;
    // masks of matched vertices, filled in increasing order
    for mask in 0..=full {
        if cost[mask].is_infinite() || mask == full {
            continue;
        }
        let i = (!mask).trailing_zeros() as usize;
        for j in i + 1..k {
            if mask & (1 << j) == 0 {
                let next = mask | (1 << i) | (1 << j);
                let c = cost[mask] + metric[(odd[i], odd[j])];
                if c < cost[next] {
                    cost[next] = c;
                    choice[next] = (i, j);
                }
            }
        }
    }
    let mut pairs = Vec::with_capacity(k / 2);
    let mut mask = full;
    while mask != 0 {
        let (i, j) = choice[mask];
        pairs.push((odd[i], odd[j]));
        mask &= !((1 << i) | (1 << j));
    }
    pairs
}

fn greedy_matching(metric: &DMatrix<f64>, odd: &[usize]) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(usize, usize)> = odd
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| odd[a + 1..].iter().map(move |&j| (i, j)))
        .collect();
    candidates.sort_by(|a, b| metric[*a].total_cmp(&metric[*b]));
    let mut used = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for (i, j) in candidates {
        if !used.contains(&i) && !used.contains(&j) {
            used.insert(i);
            used.insert(j);
            pairs.push((i, j));
        }
    }
    pairs
}

/// Hierholzer's algorithm on a connected multigraph with even degrees.
fn euler_circuit(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (e, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    let mut used = vec![false; edges.len()];
    let mut ptr = vec![0usize; n];
    let mut stack = vec![0usize];
    let mut circuit = Vec::with_capacity(edges.len() + 1);
    while let Some(&v) = stack.last() {
        let mut advanced = false;
        while ptr[v] < adj[v].len() {
            let (w, e) = adj[v][ptr[v]];
            ptr[v] += 1;
            if !used[e] {
                used[e] = true;
                stack.push(w);
                advanced = true;
                break;
            }
        }
        if !advanced {
            circuit.push(v);
            stack.pop();
        }
    }
    circuit.reverse();
    circuit
}

/// How the reference altitude is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AltitudePolicy {
    /// Constant world height (m); furniture passes underneath.
    WorldZ(f64),
    /// Constant clearance above the local surface (m).
    Clearance(f64),
}

impl AltitudePolicy {
    /// Height above the floor at which the navigation grid is built.
    pub fn grid_height(&self, world: &World) -> f64 {
        match *self {
            AltitudePolicy::WorldZ(z) => z,
            AltitudePolicy::Clearance(c) => world.floor_z + c,
        }
    }
}

/// Piecewise-linear path flown at constant speed with forward yaw.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub points: Vec<Vector3<f64>>,
    /// Heading of each segment (rad).
    pub yaws: Vec<f64>,
    pub cruise_speed: f64,
    pub altitude: AltitudePolicy,
}

/// Carrier point on the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarrierPoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub yaw: f64,
}

impl ReferenceTrajectory {
    pub fn new(points: Vec<Vector3<f64>>, cruise_speed: f64, altitude: AltitudePolicy) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("reference needs at least one point"));
        }
        if !(cruise_speed > 0.0 && cruise_speed.is_finite()) {
            return Err(Error::invalid("cruise speed must be positive"));
        }
        if points.windows(2).any(|w| (w[1] - w[0]).norm() < 1e-9) {
            return Err(Error::invalid("consecutive reference points must be distinct"));
        }
        let yaws = points.windows(2).map(|w| (w[1].y - w[0].y).atan2(w[1].x - w[0].x)).collect();
        Ok(Self {
            points,
            yaws,
            cruise_speed,
            altitude,
        })
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn duration(&self) -> f64 {
        self.length() / self.cruise_speed
    }

    /// Carrier at time `t`: moves at cruise speed, then holds the last point.
    pub fn carrier(&self, t: f64) -> CarrierPoint {
        let mut s = (t.max(0.0) * self.cruise_speed).max(0.0);
        let last_yaw = self.yaws.last().copied().unwrap_or(0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if s < len {
                let dir = seg / len;
                return CarrierPoint {
                    position: w[0] + dir * s,
                    velocity: dir * self.cruise_speed,
                    yaw: self.yaws[i],
                };
            }
            s -= len;
        }
        CarrierPoint {
            position: *self.points.last().expect("non-empty"),
            velocity: Vector3::zeros(),
            yaw: last_yaw,
        }
    }
}

const SEGMENT_STEP: f64 = 0.05;

fn segment_clear(world: &World, a: &Vector3<f64>, b: &Vector3<f64>, radius: f64) -> bool {
    let n = ((b - a).norm() / SEGMENT_STEP).ceil().max(1.0) as usize;
    (0..=n).all(|i| !world.check_collision(&(a + (b - a) * (i as f64 / n as f64)), radius))
}

/// Joins tour points into a flyable polyline: straight where the segment
/// is clear at `radius`, otherwise along the grid's shortest path with
/// line-of-sight shortcuts.
pub fn build_reference(
    world: &World,
    nav: &NavGrid,
    tour_points: &[Vector2<f64>],
    altitude: AltitudePolicy,
    cruise_speed: f64,
    radius: f64,
) -> Result<ReferenceTrajectory> {
    if tour_points.is_empty() {
        return Err(Error::invalid("empty tour"));
    }
    let z0 = altitude.grid_height(world);
    let lift = |p: &Vector2<f64>| Vector3::new(p.x, p.y, z0);
    let mut flat: Vec<Vector2<f64>> = vec![tour_points[0]];
    for w in tour_points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if segment_clear(world, &lift(&a), &lift(&b), radius) {
            flat.push(b);
            continue;
        }
        let ca = nav.cell_of(&a).ok_or_else(|| Error::invalid("tour point outside the grid"))?;
        let cb = nav.cell_of(&b).ok_or_else(|| Error::invalid("tour point outside the grid"))?;
        let mut path = nav.shortest_path(ca, cb)?;
        path[0] = a;
        *path.last_mut().expect("non-empty path") = b;
        // greedy string pulling: jump to the farthest visible path point
        let mut i = 0;
        while i + 1 < path.len() {
            let mut j = path.len() - 1;
            while j > i + 1 && !segment_clear(world, &lift(&path[i]), &lift(&path[j]), radius) {
                j -= 1;
            }
            flat.push(path[j]);
            i = j;
        }
    }
    flat.dedup_by(|b, a| (*b - *a).norm() < 1e-9);

    let points = match altitude {
        AltitudePolicy::WorldZ(_) => flat.iter().map(lift).collect(),
        AltitudePolicy::Clearance(c) => {
            let top = world.bounds.max.z;
            let mut pts = Vec::new();
            for (k, p) in flat.iter().enumerate() {
                if k > 0 {
                    let a = flat[k - 1];
                    let n = ((p - a).norm() / nav.cell_size).ceil() as usize;
                    for i in 1..n {
                        let q = a + (p - a) * (i as f64 / n as f64);
                        pts.push(Vector3::new(q.x, q.y, world.surface_below(q.x, q.y, top) + c));
                    }
                }
                pts.push(Vector3::new(p.x, p.y, world.surface_below(p.x, p.y, top) + c));
            }
            pts
        }
    };
    ReferenceTrajectory::new(points, cruise_speed, altitude)
}

/// Gains and limits of the cascaded PD controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Position proportional gains per axis (1/s²).
    pub kp: Vector3<f64>,
    /// Velocity gains per axis (1/s).
    pub kd: Vector3<f64>,
    /// Attitude proportional gains per body axis (1/s²).
    pub k_att: Vector3<f64>,
    /// Body-rate gains (1/s).
    pub k_rate: Vector3<f64>,
    pub max_tilt: f64,
    pub max_rotor_speed: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: Vector3::new(4.0, 4.0, 6.0),
            kd: Vector3::new(4.0, 4.0, 5.0),
            k_att: Vector3::new(400.0, 400.0, 100.0),
            k_rate: Vector3::new(30.0, 30.0, 15.0),
            max_tilt: 0.5,
            max_rotor_speed: dynamics::DEFAULT_MAX_ROTOR_SPEED,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let gains = self.kp.iter().chain(&self.kd).chain(&self.k_att).chain(&self.k_rate);
        if gains.copied().any(|g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::invalid("controller gains must be positive"));
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid("max tilt must lie in (0, pi/2)"));
        }
        if !(self.max_rotor_speed > 0.0) {
            return Err(Error::invalid("max rotor speed must be positive"));
        }
        Ok(())
    }
}

/// Cascaded PD: position → thrust vector → attitude → torques → rotor
/// speeds through the pseudo-inverse of the mixing map.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    mass: f64,
    inertia: Vector3<f64>,
    allocation: nalgebra::MatrixXx4<f64>,
}

impl Controller {
    pub fn new(params: &DroneParams, cfg: ControllerConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let a: Matrix4xX<f64> = Matrix4::from_diagonal(&params.wrench_scale()) * params.mixer.matrix();
        let aat = &a * a.transpose();
        let inv = aat
            .try_inverse()
            .ok_or_else(|| Error::invalid("mixing map is not full rank"))?;
        Ok(Self {
            cfg,
            mass: params.mass,
            inertia: params.inertia,
            allocation: a.transpose() * inv,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn command(&self, x: &State, target: &CarrierPoint) -> RotorCommand {
        let c = &self.cfg;
        let e_p = target.position - x.position;
        let e_v = target.velocity - x.velocity;
        let mut acc = c.kp.component_mul(&e_p) + c.kd.component_mul(&e_v) + Vector3::z() * GRAVITY;
        acc.z = acc.z.max(0.2 * GRAVITY);
        let horiz = Vector2::new(acc.x, acc.y);
        let max_h = acc.z * c.max_tilt.tan();
        if horiz.norm() > max_h {
            let h = horiz * (max_h / horiz.norm());
            acc.x = h.x;
            acc.y = h.y;
        }
        let r = x.attitude.to_rotation_matrix().into_inner();
        let thrust = self.mass * acc.dot(&r.column(2));

        let z_b = acc.normalize();
        let x_c = Vector3::new(target.yaw.cos(), target.yaw.sin(), 0.0);
        let y_b = z_b.cross(&x_c).normalize();
        let x_b = y_b.cross(&z_b);
        let r_des = Matrix3::from_columns(&[x_b, y_b, z_b]);
        let s = r_des.transpose() * r - r.transpose() * r_des;
        let e_r = 0.5 * Vector3::new(s[(2, 1)], s[(0, 2)], s[(1, 0)]);
        let w = x.angular_velocity;
        let jw = self.inertia.component_mul(&w);
        let torque =
            self.inertia.component_mul(&(-c.k_att.component_mul(&e_r) - c.k_rate.component_mul(&w))) + w.cross(&jw);

        let max_sq = c.max_rotor_speed * c.max_rotor_speed;
        let base = &self.allocation * Vector4::new(thrust, torque.x, torque.y, 0.0);
        let yaw = &self.allocation * Vector4::new(0.0, 0.0, 0.0, torque.z);
        // shrink yaw authority before it drives any rotor out of range
        let mut scale: f64 = 1.0;
        for (b, y) in base.iter().zip(yaw.iter()) {
            if *y > 0.0 && b + y > max_sq {
                scale = scale.min(((max_sq - b) / y).max(0.0));
            } else if *y < 0.0 && b + y < 0.0 {
                scale = scale.min((b / -y).max(0.0));
            }
        }
        RotorCommand(
            base.iter()
                .zip(yaw.iter())
                .map(|(b, y)| (b + scale * y).clamp(0.0, max_sq).sqrt())
                .collect(),
        )
    }
}

/// One recorded frame of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub state: State,
    pub rotors: RotorCommand,
    /// Depth frame, row-major, stored at 32-bit precision.
    pub depth: Vec<f32>,
    /// Height over ground (m).
    pub height: f64,
    /// Injected ground-effect force (N).
    pub fa: f64,
}

/// Rollout settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackConfig {
    /// Integration step (s).
    pub sim_dt: f64,
    /// Record a frame every this many integration steps.
    pub record_every: usize,
    pub camera: CameraIntrinsics,
    pub camera_pitch: f64,
    /// Collision radius of the vehicle (m).
    pub drone_radius: f64,
    /// Time spent hovering at the final point (s).
    pub hold_time: f64,
    /// Position error that counts as divergence (m).
    pub divergence: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            sim_dt: 0.002,
            record_every: 10,
            camera: CameraIntrinsics::default(),
            camera_pitch: DEFAULT_CAMERA_PITCH,
            drone_radius: 0.1,
            hold_time: 1.0,
            divergence: 5.0,
        }
    }
}

impl TrackConfig {
    pub fn frame_dt(&self) -> f64 {
        self.sim_dt * self.record_every as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sim_dt > 0.0) || self.record_every == 0 || !(self.drone_radius > 0.0) || !(self.hold_time >= 0.0) {
            return Err(Error::invalid("track config needs positive dt, radius and record interval"));
        }
        self.camera.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub samples: Vec<TrajectorySample>,
    /// Set when the vehicle touched geometry; the rollout stops there.
    pub collided: bool,
    /// Largest distance to the carrier over the run (m).
    pub max_tracking_error: f64,
}

/// Camera pose of a vehicle state.
pub fn camera_pose(x: &State, pitch: f64) -> CameraPose {
    CameraPose::from_body(x.position, &x.attitude, pitch)
}

/// Flies `reference` with the controller, injecting the ground effect at
/// the true height at every step and recording frames.
pub fn track(
    world: &World,
    params: &DroneParams,
    gep: &GroundEffectParams,
    reference: &ReferenceTrajectory,
    ctl: &Controller,
    cfg: &TrackConfig,
) -> Result<Rollout> {
    cfg.validate()?;
    gep.validate()?;
    let start = reference.carrier(0.0);
    let mut x = State::at_rest(start.position);
    x.attitude = UnitQuaternion::from_euler_angles(0.0, 0.0, start.yaw);
    let steps = ((reference.duration() + cfg.hold_time) / cfg.sim_dt).ceil() as usize;
    let mut samples = Vec::with_capacity(steps / cfg.record_every + 1);
    let mut max_err: f64 = 0.0;
    for k in 0..=steps {
        let target = reference.carrier(k as f64 * cfg.sim_dt);
        let err = (target.position - x.position).norm();
        if !err.is_finite() || err > cfg.divergence {
            return Err(Error::ControllerDiverged { step: k, error: err });
        }
        max_err = max_err.max(err);
        if world.check_collision(&x.position, cfg.drone_radius) {
            return Ok(Rollout {
                samples,
                collided: true,
                max_tracking_error: max_err,
            });
        }
        let cmd = ctl.command(&x, &target);
        let d = world.height_over_ground(&x.position)?;
        let fa = cheeseman(gep, &cmd, d)?;
        if k % cfg.record_every == 0 {
            let depth = render_depth(world, &camera_pose(&x, cfg.camera_pitch), &cfg.camera);
            samples.push(TrajectorySample {
                state: x.clone(),
                rotors: cmd.clone(),
                depth: depth.data.iter().map(|&v| v as f32).collect(),
                height: d,
                fa,
            });
        }
        if k == steps {
            break;
        }
        x = dynamics::step(params, &x, &cmd, &WrenchInput::vertical_force(fa, params.mass), cfg.sim_dt)?;
    }
    Ok(Rollout {
        samples,
        collided: false,
        max_tracking_error: max_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_navgrid, generate_world, Aabb, WorldConfig};
    use rand::Rng;

    fn brute_force(metric: &DMatrix<f64>) -> f64 {
        fn permute(rest: &mut Vec<usize>, k: usize, metric: &DMatrix<f64>, best: &mut f64) {
            if k == rest.len() {
                let mut order = vec![0];
                order.extend_from_slice(rest);
                *best = best.min(tour_length(metric, &order));
                return;
            }
            for i in k..rest.len() {
                rest.swap(k, i);
                permute(rest, k + 1, metric, best);
                rest.swap(k, i);
            }
        }
        let mut rest: Vec<usize> = (1..metric.nrows()).collect();
        let mut best = f64::INFINITY;
        permute(&mut rest, 0, metric, &mut best);
        best
    }

    fn is_permutation(order: &[usize], n: usize) -> bool {
        let mut s = order.to_vec();
        s.sort_unstable();
        s == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn unit_square_is_optimal() {
        let pts = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(0.0, 1.0),
        ];
        let m = euclidean_metric(&pts);
        let tour = christofides(&m).unwrap();
        assert_eq!(tour.length, 4.0);
        assert_eq!(brute_force(&m), 4.0);
    }

    #[test]
    fn trivial_tours() {
        let one = christofides(&euclidean_metric(&[Vector2::new(1.0, 2.0)])).unwrap();
        assert_eq!((one.order.clone(), one.length), (vec![0], 0.0));
        let two = christofides(&euclidean_metric(&[Vector2::new(0.0, 0.0), Vector2::new(3.0, 4.0)])).unwrap();
        assert_eq!(two.length, 10.0);
        let mut bad = DMatrix::from_element(3, 3, 1.0);
        bad[(0, 1)] = 2.0;
        assert!(christofides(&bad).is_err());
    }

    #[test]
    fn within_one_and_a_half_of_optimum() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(3..=9);
            let pts: Vec<_> = (0..n)
                .map(|_| Vector2::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)))
                .collect();
            let m = euclidean_metric(&pts);
            let tour = christofides(&m).unwrap();
            assert!(tour.exact_matching);
            assert!(is_permutation(&tour.order, n));
            let opt = brute_force(&m);
            assert!(tour.length <= 1.5 * opt + 1e-12, "seed {seed}: {} vs {}", tour.length, opt);
        }
    }

    #[test]
    fn exact_matching_beats_greedy() {
        // greedy pairs the close middle points and pays for the outer ones
        let pts = [0.0f64, 1.0, 1.1, 2.1];
        let m = DMatrix::from_fn(4, 4, |i, j| (pts[i] - pts[j]).abs());
        let cost = |pairs: Vec<(usize, usize)>| pairs.iter().map(|&(a, b)| m[(a, b)]).sum::<f64>();
        let exact = cost(exact_matching(&m, &[0, 1, 2, 3]));
        let greedy = cost(greedy_matching(&m, &[0, 1, 2, 3]));
        assert!((exact - 2.0).abs() < 1e-12);
        assert!(greedy > exact);
    }

    fn grid_world(nx: usize) -> NavGrid {
        let w = World::new(
            Aabb::new(Vector3::new(0.0, 0.0, 0.0), Vector3::new(nx as f64, 1.0, 3.0)),
            0.0,
            vec![],
            0,
        )
        .unwrap();
        build_navgrid(&w, 0.2, 1.0, 1.0).unwrap()
    }

    #[test]
    fn waypoint_sampling() {
        let nav = grid_world(6);
        assert_eq!(sample_waypoints(&nav, 1, 3).unwrap().len(), 1);
        let a = sample_waypoints(&nav, 4, 7).unwrap();
        assert_eq!(a, sample_waypoints(&nav, 4, 7).unwrap());
        let mut keys: Vec<_> = a.iter().map(|p| nav.cell_of(p).unwrap()).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 4);
        assert!(sample_waypoints(&nav, 7, 0).is_err());
    }

    #[test]
    fn waypoint_sampling_is_uniform() {
        let nav = grid_world(2);
        assert_eq!(nav.navigable_cells().len(), 2);
        let n = 10_000;
        let first = (0..n)
            .filter(|&s| sample_waypoints(&nav, 1, s as u64).unwrap()[0].x < 1.0)
            .count();
        let freq = first as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq}");
    }

    fn two_rooms() -> World {
        let b = |x0: f64, y0: f64, x1: f64, y1: f64| Aabb::new(Vector3::new(x0, y0, 0.0), Vector3::new(x1, y1, 3.0));
        World::new(
            b(0.0, 0.0, 8.0, 4.0),
            0.0,
            vec![b(3.95, 0.0, 4.05, 1.5), b(3.95, 2.5, 4.05, 4.0)],
            0,
        )
        .unwrap()
    }

    fn polyline_clear(world: &World, r: &ReferenceTrajectory, radius: f64) -> bool {
        r.points.windows(2).all(|w| segment_clear(world, &w[0], &w[1], radius))
    }

    #[test]
    fn reference_threads_the_door() {
        let w = two_rooms();
        let policy = AltitudePolicy::WorldZ(1.0);
        let nav = build_navgrid(&w, 0.3, 1.0, 0.25).unwrap();
        let a = nav.center(nav.cell_of(&Vector2::new(1.0, 0.6)).unwrap());
        let b = nav.center(nav.cell_of(&Vector2::new(7.0, 0.6)).unwrap());
        let r = build_reference(&w, &nav, &[a, b], policy, 0.5, 0.2).unwrap();
        assert!(r.points.len() > 2);
        // the crossing of the wall plane lies in the door gap
        let cross = r
            .points
            .windows(2)
            .find(|s| (s[0].x - 4.0) * (s[1].x - 4.0) <= 0.0)
            .map(|s| s[0].y + (s[1].y - s[0].y) * (4.0 - s[0].x) / (s[1].x - s[0].x))
            .unwrap();
        assert!(cross > 1.5 && cross < 2.5, "crossing at y = {cross}");
        assert!(polyline_clear(&w, &r, 0.2));
        for (yaw, s) in r.yaws.iter().zip(r.points.windows(2)) {
            assert!((yaw - (s[1].y - s[0].y).atan2(s[1].x - s[0].x)).abs() < 1e-15);
        }
    }

    #[test]
    fn visible_points_give_two_point_polyline() {
        let w = two_rooms();
        let nav = build_navgrid(&w, 0.3, 1.0, 0.25).unwrap();
        let r = build_reference(
            &w,
            &nav,
            &[Vector2::new(1.0, 1.0), Vector2::new(3.0, 3.0)],
            AltitudePolicy::WorldZ(1.2),
            0.5,
            0.2,
        )
        .unwrap();
        assert_eq!(r.points.len(), 2);
        assert_eq!(r.points[0].z, 1.2);
    }

    fn flat_world() -> World {
        World::new(
            Aabb::new(Vector3::new(-10.0, -10.0, 0.0), Vector3::new(10.0, 10.0, 3.0)),
            0.0,
            vec![],
            0,
        )
        .unwrap()
    }

    fn small_track() -> TrackConfig {
        TrackConfig {
            camera: CameraIntrinsics {
                width: 8,
                height: 8,
                ..CameraIntrinsics::default()
            },
            ..TrackConfig::default()
        }
    }

    #[test]
    fn hover_holds_position() {
        let params = DroneParams::default();
        let gep = GroundEffectParams::for_drone(&params, 0.023);
        let ctl = Controller::new(&params, ControllerConfig::default()).unwrap();
        let mut r = ReferenceTrajectory::new(vec![Vector3::new(0.0, 0.0, 1.0)], 0.5, AltitudePolicy::WorldZ(1.0)).unwrap();
        r.yaws.clear();
        let cfg = TrackConfig {
            hold_time: 10.0,
            ..small_track()
        };
        let out = track(&flat_world(), &params, &gep, &r, &ctl, &cfg).unwrap();
        assert!(!out.collided);
        let settle = (2.0 / cfg.frame_dt()) as usize;
        for s in &out.samples[settle..] {
            assert!((s.state.position - Vector3::new(0.0, 0.0, 1.0)).norm() <= 0.01);
        }
    }

    #[test]
    fn straight_line_cross_track() {
        let params = DroneParams::default();
        let gep = GroundEffectParams::for_drone(&params, 0.023);
        let ctl = Controller::new(&params, ControllerConfig::default()).unwrap();
        let r = ReferenceTrajectory::new(
            vec![Vector3::new(-2.5, 1.0, 1.0), Vector3::new(2.5, 1.0, 1.0)],
            0.5,
            AltitudePolicy::WorldZ(1.0),
        )
        .unwrap();
        let out = track(&flat_world(), &params, &gep, &r, &ctl, &small_track()).unwrap();
        let settle = (2.0 / small_track().frame_dt()) as usize;
        for s in &out.samples[settle..] {
            let p = s.state.position;
            let cross = ((p.y - 1.0).powi(2) + (p.z - 1.0).powi(2)).sqrt();
            assert!(cross <= 0.05, "cross-track {cross}");
        }
    }

    #[test]
    fn table_raises_ground_effect() {
        let params = DroneParams::default();
        let gep = GroundEffectParams::for_drone(&params, 0.023);
        let ctl = Controller::new(&params, ControllerConfig::default()).unwrap();
        let mut w = flat_world();
        w.boxes.push(Aabb::new(Vector3::new(-0.5, -0.5, 0.0), Vector3::new(0.5, 0.5, 0.5)));
        let r = ReferenceTrajectory::new(
            vec![Vector3::new(-3.0, 0.0, 0.8), Vector3::new(3.0, 0.0, 0.8)],
            0.5,
            AltitudePolicy::WorldZ(0.8),
        )
        .unwrap();
        let out = track(&w, &params, &gep, &r, &ctl, &small_track()).unwrap();
        assert!(!out.collided);
        let over: Vec<_> = out.samples.iter().filter(|s| s.state.position.x.abs() < 0.4).collect();
        let away: Vec<_> = out.samples.iter().filter(|s| s.state.position.x.abs() > 1.0).collect();
        assert!(!over.is_empty() && !away.is_empty());
        for s in over.iter().chain(&away) {
            assert_eq!(s.height, w.height_over_ground(&s.state.position).unwrap());
            assert_eq!(s.fa, cheeseman(&gep, &s.rotors, s.height).unwrap());
        }
        let (mean_over, mean_away) = (
            over.iter().map(|s| s.height).sum::<f64>() / over.len() as f64,
            away.iter().map(|s| s.height).sum::<f64>() / away.len() as f64,
        );
        assert!((mean_away - mean_over - 0.5).abs() < 0.02);
        assert!(over.iter().map(|s| s.fa).fold(f64::INFINITY, f64::min) > away.iter().map(|s| s.fa).fold(0.0, f64::max));
    }

    #[test]
    fn generated_world_rollout_is_clean_and_deterministic() {
        let world = generate_world(11, &WorldConfig::default()).unwrap();
        let params = DroneParams::default();
        let gep = GroundEffectParams::for_drone(&params, 0.023);
        let policy = AltitudePolicy::WorldZ(1.0);
        let nav = build_navgrid(&world, 0.3, policy.grid_height(&world), 0.25).unwrap();
        let pts = sample_waypoints(&nav, 4, 5).unwrap();
        let tour = christofides(&navgrid_metric(&nav, &pts).unwrap()).unwrap();
        let ordered: Vec<_> = tour.order.iter().map(|&i| pts[i]).collect();
        let r = build_reference(&world, &nav, &ordered, policy, 0.75, 0.2);
        let Ok(r) = r else { return };
        assert!(polyline_clear(&world, &r, 0.2));
        let ctl = Controller::new(&params, ControllerConfig::default()).unwrap();
        let a = track(&world, &params, &gep, &r, &ctl, &small_track()).unwrap();
        let b = track(&world, &params, &gep, &r, &ctl, &small_track()).unwrap();
        assert_eq!(a, b);
        for s in &a.samples {
            assert!(!world.check_collision(&s.state.position, 0.1));
        }
    }
}
