//! Constructed single-table scenes: straight flights at constant altitude
//! over one table in an empty room.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DatasetConfig, Split, Trajectory, TrajectoryMeta};
use crate::error::{Error, Result};
use crate::groundfx::GroundEffectParams;
use crate::planner::{camera_pose, track, AltitudePolicy, Controller, ReferenceTrajectory};
use crate::world::{render_depth, Aabb, World};

pub const ROOM_LENGTH: f64 = 8.0;
pub const ROOM_WIDTH: f64 = 4.0;
pub const ROOM_HEIGHT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TableCase {
    pub seed: u64,
    pub world: World,
    pub table: Aabb,
    pub altitude: f64,
    pub reference: ReferenceTrajectory,
}

/// Empty room with the given boxes.
pub fn room(boxes: Vec<Aabb>, seed: u64) -> Result<World> {
    World::new(
        Aabb::new(Vector3::zeros(), Vector3::new(ROOM_LENGTH, ROOM_WIDTH, ROOM_HEIGHT)),
        0.0,
        boxes,
        seed,
    )
}

/// Random table ahead of a straight flight along +x through the room's
/// center line. Table top 0.4–0.8 m high, 1.0–1.6 m long, flight
/// 0.35–0.6 m above the top.
pub fn table_case(seed: u64, cruise_speed: f64) -> Result<TableCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(0.4..0.8);
    let len = rng.random_range(1.0..1.6);
    let width = rng.random_range(1.2..2.0);
    let x0 = rng.random_range(3.5..4.5);
    let yc = ROOM_WIDTH / 2.0 + rng.random_range(-0.2..0.2);
    let table = Aabb::new(
        Vector3::new(x0, yc - width / 2.0, 0.0),
        Vector3::new(x0 + len, yc + width / 2.0, h),
    );
    let altitude = h + rng.random_range(0.35..0.6);
    let y = ROOM_WIDTH / 2.0;
    let reference = ReferenceTrajectory::new(
        vec![Vector3::new(0.8, y, altitude), Vector3::new(ROOM_LENGTH - 0.8, y, altitude)],
        cruise_speed,
        AltitudePolicy::WorldZ(altitude),
    )?;
    Ok(TableCase {
        seed,
        world: room(vec![table], seed)?,
        table,
        altitude,
        reference,
    })
}

/// Flies a case with the dataset's vehicle, controller and camera.
pub fn fly(case: &TableCase, cfg: &DatasetConfig, split: Split) -> Result<Trajectory> {
    let gep = GroundEffectParams::for_drone(&cfg.drone, cfg.prop_radius);
    let ctl = Controller::new(&cfg.drone, cfg.controller.clone())?;
    let rollout = track(&case.world, &cfg.drone, &gep, &case.reference, &ctl, &cfg.track)?;
    if rollout.collided {
        return Err(Error::invalid(format!("table case {} collided", case.seed)));
    }
    Ok(Trajectory {
        meta: TrajectoryMeta {
            world: String::new(),
            world_seed: case.seed,
            traj_seed: case.seed,
            split,
            dt: cfg.track.frame_dt(),
            drone: cfg.drone.clone(),
            ground_effect: gep,
            camera: cfg.track.camera.clone(),
            camera_pitch: cfg.track.camera_pitch,
            altitude: case.reference.altitude,
        },
        samples: rollout.samples,
    })
}

/// Whether the table contributes any pixel to the frame at `state`.
pub fn table_visible(case: &TableCase, traj: &Trajectory, frame: usize) -> Result<bool> {
    let empty = room(Vec::new(), case.seed)?;
    let pose = camera_pose(&traj.samples[frame].state, traj.meta.camera_pitch);
    Ok(render_depth(&empty, &pose, &traj.meta.camera).data != render_depth(&case.world, &pose, &traj.meta.camera).data)
}

/// Last frame with the vehicle above the table at which the table is out
/// of view, provided it was in view within the preceding `lookback` frames.
pub fn occluded_frame(case: &TableCase, traj: &Trajectory, lookback: usize) -> Result<Option<usize>> {
    let over = |i: usize| {
        let p = traj.samples[i].state.position;
        p.x > case.table.min.x + 0.05
            && p.x < case.table.max.x - 0.05
            && p.y > case.table.min.y
            && p.y < case.table.max.y
    };
    let Some(t) = (0..traj.samples.len()).rev().find(|&i| over(i)) else {
        return Ok(None);
    };
    if table_visible(case, traj, t)? {
        return Ok(None);
    }
    for i in t.saturating_sub(lookback)..t {
        if table_visible(case, traj, i)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::CameraIntrinsics;

    fn cfg() -> DatasetConfig {
        let mut c = DatasetConfig::default();
        c.track.camera = CameraIntrinsics {
            width: 16,
            height: 16,
            ..CameraIntrinsics::default()
        };
        c
    }

    #[test]
    fn table_is_hidden_when_overhead() {
        let c = cfg();
        let case = table_case(3, c.cruise_speed).unwrap();
        let traj = fly(&case, &c, Split::Test).unwrap();
        let t = occluded_frame(&case, &traj, 90).unwrap().expect("occluded instant");
        let s = &traj.samples[t];
        assert!((s.height - (s.state.position.z - case.table.max.z)).abs() < 1e-12);
        assert!(s.height < case.altitude - 0.3);
    }
}
