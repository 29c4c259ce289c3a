//! Trajectory datasets on disk and their generation.
//!
//! Layout of a dataset directory:
//!
//! ```text
//! index                         dataset index (text)
//! worlds/world-<seed>.txt       world manifests
//! traj-<world>-<k>/manifest     trajectory manifest (text)
//! traj-<world>-<k>/states.f64   n × 13: p, q (w x y z), v, ω
//! traj-<world>-<k>/rotors.f64   n × rotors: Ω
//! traj-<world>-<k>/height.f64   n: height over ground
//! traj-<world>-<k>/fa.f64       n: injected ground-effect force
//! traj-<world>-<k>/depth.f32    n × H × W depth frames
//! ```
//!
//! Blobs are flat little-endian arrays, row-major. The manifest records a
//! SHA-256 per blob; loading verifies every checksum.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use nalgebra::{Matrix4xX, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dynamics::{DroneParams, Mixer, RotorCommand, State};
use crate::error::{Error, Result};
use crate::groundfx::GroundEffectParams;
use crate::planner::{
    build_reference, christofides, navgrid_metric, sample_waypoints, track, AltitudePolicy, Controller,
    ControllerConfig, TrackConfig, TrajectorySample,
};
use crate::world::{build_navgrid, generate_world, CameraIntrinsics, World, WorldConfig};

pub const INDEX_MAGIC: &str = "turbest-dataset";
pub const TRAJECTORY_MAGIC: &str = "turbest-trajectory";
pub const FORMAT_VERSION: u32 = 1;

const BLOBS: [&str; 5] = ["states.f64", "rotors.f64", "height.f64", "fa.f64", "depth.f32"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?}"))),
        }
    }
}

/// Everything needed to interpret a trajectory's blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMeta {
    /// World manifest path relative to the dataset root.
    pub world: String,
    pub world_seed: u64,
    pub traj_seed: u64,
    pub split: Split,
    /// Interval between recorded frames (s).
    pub dt: f64,
    pub drone: DroneParams,
    pub ground_effect: GroundEffectParams,
    pub camera: CameraIntrinsics,
    pub camera_pitch: f64,
    pub altitude: AltitudePolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    pub samples: Vec<TrajectorySample>,
}

fn f64s(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Trajectory {
    /// Blob bytes in [`BLOBS`] order.
    pub fn blobs(&self) -> [Vec<u8>; 5] {
        let mut states = Vec::new();
        let mut rotors = Vec::new();
        let mut height = Vec::new();
        let mut fa = Vec::new();
        let mut depth = Vec::new();
        for s in &self.samples {
            s.state.to_array().iter().for_each(|v| states.extend_from_slice(&v.to_le_bytes()));
            s.rotors.0.iter().for_each(|v| rotors.extend_from_slice(&v.to_le_bytes()));
            height.extend_from_slice(&s.height.to_le_bytes());
            fa.extend_from_slice(&s.fa.to_le_bytes());
            s.depth.iter().for_each(|v| depth.extend_from_slice(&v.to_le_bytes()));
        }
        [states, rotors, height, fa, depth]
    }

    pub fn manifest(&self, checksums: &[String]) -> String {
        let m = &self.meta;
        let d = &m.drone;
        let g = &m.ground_effect;
        let c = &m.camera;
        let mut s = format!("{TRAJECTORY_MAGIC} {FORMAT_VERSION}\n");
        s += &format!("world {}\n", m.world);
        s += &format!("world_seed {}\n", m.world_seed);
        s += &format!("traj_seed {}\n", m.traj_seed);
        s += &format!("split {}\n", m.split);
        s += &format!("dt {:?}\n", m.dt);
        s += &format!("samples {}\n", self.samples.len());
        s += &format!(
            "drone {}\n",
            f64s(&[d.mass, d.inertia.x, d.inertia.y, d.inertia.z, d.arm_length, d.k_thrust, d.k_torque, d.max_rotor_speed])
        );
        let mix = d.mixer.matrix();
        let rows: Vec<f64> = (0..4).flat_map(|r| (0..mix.ncols()).map(move |c| mix[(r, c)])).collect();
        s += &format!("mixer {} {}\n", mix.ncols(), f64s(&rows));
        s += &format!("ground_effect {}\n", f64s(&[g.radius, g.mu, g.k_thrust, g.f_cap]));
        s += &format!(
            "camera {} {} {}\n",
            c.width,
            c.height,
            f64s(&[c.fov_y, c.max_depth, m.camera_pitch])
        );
        s += &match m.altitude {
            AltitudePolicy::WorldZ(z) => format!("altitude world_z {z:?}\n"),
            AltitudePolicy::Clearance(z) => format!("altitude clearance {z:?}\n"),
        };
        for (name, sum) in BLOBS.iter().zip(checksums) {
            s += &format!("checksum {name} {sum}\n");
        }
        s += "end\n";
        s
    }

    /// Writes the trajectory into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let blobs = self.blobs();
        let sums: Vec<String> = blobs.iter().map(|b| sha256(b)).collect();
        for (name, bytes) in BLOBS.iter().zip(&blobs) {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| Error::io(p, e))?;
        }
        let p = dir.join("manifest");
        fs::write(&p, self.manifest(&sums)).map_err(|e| Error::io(p, e))
    }

    /// Reads and verifies a trajectory directory.
    pub fn read(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let (meta, n, sums) = parse_manifest(&text, &mpath)?;
        let mut blobs = Vec::with_capacity(BLOBS.len());
        for (name, sum) in BLOBS.iter().zip(&sums) {
            let p = dir.join(name);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            if &sha256(&bytes) != sum {
                return Err(Error::Checksum { path: p });
            }
            blobs.push(bytes);
        }
        let nr = meta.drone.n_rotors();
        let px = meta.camera.pixels();
        let expect = [n * 13 * 8, n * nr * 8, n * 8, n * 8, n * px * 4];
        for ((name, b), e) in BLOBS.iter().zip(&blobs).zip(expect) {
            if b.len() != e {
                return Err(Error::format(
                    dir.join(name).display().to_string(),
                    format!("expected {e} bytes for {n} samples, found {}", b.len()),
                ));
            }
        }
        let f64_at = |b: &[u8], i: usize| f64::from_le_bytes(b[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        let samples = (0..n)
            .map(|k| {
                let mut a = [0.0; 13];
                for (j, v) in a.iter_mut().enumerate() {
                    *v = f64_at(&blobs[0], k * 13 + j);
                }
                TrajectorySample {
                    state: State::from_array(&a),
                    rotors: RotorCommand((0..nr).map(|j| f64_at(&blobs[1], k * nr + j)).collect()),
                    height: f64_at(&blobs[2], k),
                    fa: f64_at(&blobs[3], k),
                    depth: blobs[4][k * px * 4..(k + 1) * px * 4]
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                }
            })
            .collect();
        Ok(Self { meta, samples })
    }
}

fn parse_manifest(text: &str, path: &Path) -> Result<(TrajectoryMeta, usize, Vec<String>)> {
    let ctx = path.display().to_string();
    let err = |line: usize, m: String| Error::format(format!("{ctx} line {line}"), m);
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
    if first != format!("{TRAJECTORY_MAGIC} {FORMAT_VERSION}") {
        return Err(err(1, format!("unsupported header {first:?}")));
    }
    let mut fields = std::collections::HashMap::new();
    let mut sums = std::collections::HashMap::new();
    for (ln, line) in lines {
        if line == "end" {
            break;
        }
        let (key, rest) = line.split_once(' ').ok_or_else(|| err(ln, format!("malformed line {line:?}")))?;
        if key == "checksum" {
            let (name, sum) = rest.split_once(' ').ok_or_else(|| err(ln, "malformed checksum".into()))?;
            sums.insert(name.to_string(), sum.to_string());
        } else {
            fields.insert(key.to_string(), (ln, rest.to_string()));
        }
    }
    let get = |k: &str| -> Result<(usize, &str)> {
        fields
            .get(k)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| Error::format(ctx.clone(), format!("missing field {k}")))
    };
    let num = |k: &str| -> Result<Vec<f64>> {
        let (ln, v) = get(k)?;
        v.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err(ln, format!("bad number {t:?} in {k}"))))
            .collect()
    };
    let int = |k: &str| -> Result<u64> {
        let (ln, v) = get(k)?;
        v.trim().parse().map_err(|_| err(ln, format!("bad integer in {k}")))
    };
    let drone_v = num("drone")?;
    let mix_v = num("mixer")?;
    let ge = num("ground_effect")?;
    let cam = num("camera")?;
    if drone_v.len() != 8 || ge.len() != 4 || cam.len() != 5 || mix_v.is_empty() {
        return Err(Error::format(ctx.clone(), "wrong field arity"));
    }
    let nr = mix_v[0] as usize;
    if mix_v.len() != 1 + 4 * nr {
        return Err(Error::format(ctx.clone(), "mixer arity"));
    }
    let mixer = Mixer::from_matrix(Matrix4xX::from_row_slice(&mix_v[1..]))?;
    let drone = DroneParams {
        mass: drone_v[0],
        inertia: Vector3::new(drone_v[1], drone_v[2], drone_v[3]),
        arm_length: drone_v[4],
        k_thrust: drone_v[5],
        k_torque: drone_v[6],
        max_rotor_speed: drone_v[7],
        mixer,
    };
    let (aln, alt) = get("altitude")?;
    let altitude = match alt.split_once(' ') {
        Some(("world_z", v)) => AltitudePolicy::WorldZ(v.parse().map_err(|_| err(aln, "bad altitude".into()))?),
        Some(("clearance", v)) => AltitudePolicy::Clearance(v.parse().map_err(|_| err(aln, "bad altitude".into()))?),
        _ => return Err(err(aln, format!("bad altitude policy {alt:?}"))),
    };
    let meta = TrajectoryMeta {
        world: get("world")?.1.to_string(),
        world_seed: int("world_seed")?,
        traj_seed: int("traj_seed")?,
        split: get("split")?.1.parse()?,
        dt: num("dt")?.first().copied().unwrap_or(f64::NAN),
        drone,
        ground_effect: GroundEffectParams {
            radius: ge[0],
            mu: ge[1],
            k_thrust: ge[2],
            f_cap: ge[3],
        },
        camera: CameraIntrinsics {
            width: cam[0] as usize,
            height: cam[1] as usize,
            fov_y: cam[2],
            max_depth: cam[3],
        },
        camera_pitch: cam[4],
        altitude,
    };
    meta.camera.validate()?;
    let checks = BLOBS
        .iter()
        .map(|b| {
            sums.get(*b)
                .cloned()
                .ok_or_else(|| Error::format(ctx.clone(), format!("missing checksum for {b}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, int("samples")? as usize, checks))
}

/// One line of the dataset index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    /// Trajectory directory relative to the root.
    pub dir: String,
    pub split: Split,
    pub world_seed: u64,
    pub samples: usize,
}

/// A dataset directory and its index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let p = root.join("index");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let ctx = p.display().to_string();
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l == format!("{INDEX_MAGIC} {FORMAT_VERSION}") => {}
            other => return Err(Error::format(ctx, format!("unsupported header {:?}", other.map(|o| o.1)))),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::format(format!("{ctx} line {}", i + 1), format!("malformed entry {line:?}"));
            let [dir, split, world_seed, samples] = parts.as_slice() else {
                return Err(bad());
            };
            entries.push(IndexEntry {
                dir: dir.to_string(),
                split: split.parse()?,
                world_seed: world_seed.parse().map_err(|_| bad())?,
                samples: samples.parse().map_err(|_| bad())?,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn write_index(root: &Path, entries: &[IndexEntry]) -> Result<()> {
        let mut s = format!("{INDEX_MAGIC} {FORMAT_VERSION}\n");
        for e in entries {
            s += &format!("{} {} {} {}\n", e.dir, e.split, e.world_seed, e.samples);
        }
        let p = root.join("index");
        fs::write(&p, s).map_err(|e| Error::io(p, e))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn load(&self, entry: &IndexEntry) -> Result<Trajectory> {
        Trajectory::read(&self.root.join(&entry.dir))
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Trajectory>> {
        self.entries(split).map(|e| self.load(e)).collect()
    }

    pub fn load_world(&self, meta: &TrajectoryMeta) -> Result<World> {
        let p = self.root.join(&meta.world);
        World::from_manifest(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)
    }

    pub fn total_samples(&self) -> usize {
        self.entries.iter().map(|e| e.samples).sum()
    }
}

/// Altitude sampling per trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AltitudeMode {
    WorldZ,
    Clearance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub worlds: usize,
    pub trajectories_per_world: usize,
    pub waypoints: usize,
    pub val_worlds: usize,
    pub test_worlds: usize,
    pub world: WorldConfig,
    pub drone: DroneParams,
    /// Propeller radius for the ground-effect law (m).
    pub prop_radius: f64,
    pub controller: ControllerConfig,
    pub track: TrackConfig,
    pub cruise_speed: f64,
    pub altitude_mode: AltitudeMode,
    /// Flight altitude range, sampled uniformly per trajectory (m).
    pub altitude_range: (f64, f64),
    /// Clearance radius for the grid and reference segments (m).
    pub nav_radius: f64,
    pub cell_size: f64,
    /// Attempts per trajectory slot before it counts as failed.
    pub attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            worlds: 20,
            trajectories_per_world: 3,
            waypoints: 4,
            val_worlds: 3,
            test_worlds: 4,
            world: WorldConfig::default(),
            drone: DroneParams::default(),
            prop_radius: 0.023,
            controller: ControllerConfig::default(),
            track: TrackConfig::default(),
            cruise_speed: 0.75,
            altitude_mode: AltitudeMode::WorldZ,
            altitude_range: (0.7, 1.5),
            nav_radius: 0.3,
            cell_size: 0.25,
            attempts: 3,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.worlds == 0 || self.trajectories_per_world == 0 || self.waypoints == 0 || self.attempts == 0 {
            return Err(Error::invalid("dataset counts must be positive"));
        }
        if self.val_worlds + self.test_worlds >= self.worlds {
            return Err(Error::invalid("need at least one training world"));
        }
        let (lo, hi) = self.altitude_range;
        if !(lo > 0.0 && lo <= hi && hi < self.world.height) {
            return Err(Error::invalid("altitude range must lie inside the world height"));
        }
        if !(self.cruise_speed > 0.0 && self.nav_radius > 0.0 && self.cell_size > 0.0 && self.prop_radius > 0.0) {
            return Err(Error::invalid("speeds, radii and cell size must be positive"));
        }
        self.world.validate()?;
        self.drone.validate()?;
        self.controller.validate()?;
        self.track.validate()
    }

    /// Seed of world `i`, split of world `i`.
    pub fn world_seed(&self, i: usize) -> u64 {
        mix(self.seed, i as u64)
    }

    pub fn split_of(&self, i: usize) -> Split {
        if i < self.test_worlds {
            Split::Test
        } else if i < self.test_worlds + self.val_worlds {
            Split::Val
        } else {
            Split::Train
        }
    }
}

/// SplitMix64-style seed derivation.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Plans and flies one trajectory in `world`.
pub fn simulate_trajectory(world: &World, cfg: &DatasetConfig, seed: u64) -> Result<(Vec<TrajectorySample>, AltitudePolicy)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cfg.altitude_range;
    let alt = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let policy = match cfg.altitude_mode {
        AltitudeMode::WorldZ => AltitudePolicy::WorldZ(world.floor_z + alt),
        AltitudeMode::Clearance => AltitudePolicy::Clearance(alt),
    };
    let nav = build_navgrid(world, cfg.nav_radius, policy.grid_height(world), cfg.cell_size)?;
    let pts = sample_waypoints(&nav, cfg.waypoints, rng.random())?;
    let tour = christofides(&navgrid_metric(&nav, &pts)?)?;
    let ordered: Vec<_> = tour.order.iter().map(|&i| pts[i]).collect();
    let reference = build_reference(
        world,
        &nav,
        &ordered,
        policy,
        cfg.cruise_speed,
        cfg.nav_radius - cfg.cell_size / 2.0,
    )?;
    let gep = GroundEffectParams::for_drone(&cfg.drone, cfg.prop_radius);
    let ctl = Controller::new(&cfg.drone, cfg.controller.clone())?;
    let rollout = track(world, &cfg.drone, &gep, &reference, &ctl, &cfg.track)?;
    if rollout.collided {
        return Err(Error::invalid(format!(
            "collision after {} frames",
            rollout.samples.len()
        )));
    }
    Ok((rollout.samples, policy))
}

/// Summary of a generation run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub trajectories: usize,
    pub failed_slots: usize,
    pub samples: usize,
}

/// Generates worlds and trajectories into `out`, using up to `threads`
/// workers. Output is identical for any thread count.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path, threads: usize) -> Result<GenerationReport> {
    cfg.validate()?;
    fs::create_dir_all(out.join("worlds")).map_err(|e| Error::io(out, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let worlds: Vec<World> = pool.install(|| {
        (0..cfg.worlds)
            .into_par_iter()
            .map(|i| generate_world(cfg.world_seed(i), &cfg.world))
            .collect::<Result<Vec<_>>>()
    })?;
    for w in &worlds {
        let p = out.join(world_path(w.seed));
        fs::write(&p, w.to_manifest()).map_err(|e| Error::io(p, e))?;
    }

    let slots: Vec<(usize, usize)> = (0..cfg.worlds)
        .flat_map(|i| (0..cfg.trajectories_per_world).map(move |k| (i, k)))
        .collect();
    let results: Vec<Result<Option<IndexEntry>>> = pool.install(|| {
        slots
            .par_iter()
            .map(|&(i, k)| {
                let world = &worlds[i];
                for attempt in 0..cfg.attempts {
                    let seed = mix(mix(world.seed, k as u64), attempt as u64);
                    match simulate_trajectory(world, cfg, seed) {
                        Ok((samples, altitude)) => {
                            let traj = Trajectory {
                                meta: TrajectoryMeta {
                                    world: world_path(world.seed),
                                    world_seed: world.seed,
                                    traj_seed: seed,
                                    split: cfg.split_of(i),
                                    dt: cfg.track.frame_dt(),
                                    drone: cfg.drone.clone(),
                                    ground_effect: GroundEffectParams::for_drone(&cfg.drone, cfg.prop_radius),
                                    camera: cfg.track.camera,
                                    camera_pitch: cfg.track.camera_pitch,
                                    altitude,
                                },
                                samples,
                            };
                            let dir = format!("traj-{}-{k}", world.seed);
                            traj.write(&out.join(&dir))?;
                            return Ok(Some(IndexEntry {
                                dir,
                                split: traj.meta.split,
                                world_seed: world.seed,
                                samples: traj.samples.len(),
                            }));
                        }
                        Err(e) => warn!("world {} slot {k} attempt {attempt}: {e}", world.seed),
                    }
                }
                Ok(None)
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut failed = 0;
    for r in results {
        match r? {
            Some(e) => entries.push(e),
            None => failed += 1,
        }
    }
    if 2 * failed > slots.len() {
        return Err(Error::invalid(format!(
            "{failed} of {} trajectory slots failed",
            slots.len()
        )));
    }
    Dataset::write_index(out, &entries)?;
    let samples = entries.iter().map(|e| e.samples).sum();
    info!(
        "generated {} trajectories ({} samples), {failed} failed slots",
        entries.len(),
        samples
    );
    Ok(GenerationReport {
        trajectories: entries.len(),
        failed_slots: failed,
        samples,
    })
}

fn world_path(seed: u64) -> String {
    format!("worlds/world-{seed}.txt")
}
