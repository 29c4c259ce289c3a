use nalgebra::Vector3;
use turbest::dataset::{DatasetConfig, Split, Trajectory};
use turbest::estimator::*;
use turbest::nn::{Adam, Mode};
use turbest::planner::{AltitudePolicy, ReferenceTrajectory};
use turbest::scenes::{fly, room, table_case, TableCase};
use turbest::world::CameraIntrinsics;
use turbest::GroundEffectParams;

fn desk(res: usize) -> DatasetConfig {
    let mut c = DatasetConfig::default();
    c.track.camera = CameraIntrinsics {
        width: res,
        height: res,
        ..CameraIntrinsics::default()
    };
    c
}

fn model_cfg(res: usize) -> ModelConfig {
    ModelConfig {
        resolution: res,
        ..ModelConfig::default()
    }
}

/// Full-batch Adam on fixed windows, then batch-norm statistics refreshed
/// on the same frames; returns the loss history.
fn overfit(model: &mut HeightModel, traj: &Trajectory, ends: &[usize], steps: usize, lr: f64) -> Vec<f64> {
    let h = model.config.window;
    let b = ends.len();
    let mut frames: Vec<&[f32]> = vec![&[]; h * b];
    let mut target = vec![0.0; h * b];
    for (bi, &t) in ends.iter().enumerate() {
        for (j, idx) in model.config.window_indices(t).enumerate() {
            frames[j * b + bi] = &traj.samples[idx].depth;
            target[j * b + bi] = traj.samples[idx].height;
        }
    }
    let x = frames_tensor(&frames, &model.config).unwrap();
    let mut adam = Adam::new(lr);
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        model.zero_grad();
        let z = model.forward(&x, h, b, Mode::Train).unwrap();
        let (loss, dz) = height_loss(&z, &target);
        model.backward(&dz).unwrap();
        adam.update(&mut model.params_mut()).unwrap();
        history.push(loss);
    }
    model.recalibrate(&x).unwrap();
    history
}

fn table_flight(res: usize, seed: u64) -> (TableCase, Trajectory) {
    let cfg = desk(res);
    let case = table_case(seed, cfg.cruise_speed).unwrap();
    let traj = fly(&case, &cfg, Split::Train).unwrap();
    (case, traj)
}

#[test]
fn ten_sample_overfit() {
    let (_, traj) = table_flight(16, 5);
    let n = traj.samples.len();
    let ends: Vec<usize> = (0..10).map(|i| n / 12 + i * n / 12).collect();
    let mut m = HeightModel::new(model_cfg(16), 1).unwrap();
    m.set_input_gradient(false);
    let hist = overfit(&mut m, &traj, &ends, 300, 3e-4);
    let warmup = 20;
    let reached = hist
        .iter()
        .position(|&l| l <= 0.01 * hist[0])
        .unwrap_or_else(|| panic!("loss {} -> {}", hist[0], hist[hist.len() - 1]));
    let worst_rise = hist[warmup..=reached].windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    assert!(worst_rise <= 0.0, "loss rose by {worst_rise} before reaching 1%");

    let mut se = 0.0;
    for &t in &ends {
        let frames: Vec<&[f32]> = m.config.window_indices(t).map(|i| traj.samples[i].depth.as_slice()).collect();
        let d = predict_height(&mut m, &frames).unwrap();
        se += (d[d.len() - 1] - traj.samples[t].height).powi(2);
    }
    let rmse = (se / ends.len() as f64).sqrt();
    assert!(rmse <= 0.01, "training rmse {rmse}");
}

#[test]
fn hover_clip_overfit() {
    let mut cfg = desk(16);
    cfg.track.hold_time = 2.0;
    let world = room(Vec::new(), 0).unwrap();
    let p = Vector3::new(4.0, 2.0, 1.5);
    let case = TableCase {
        seed: 0,
        world,
        table: turbest::world::Aabb::new(Vector3::zeros(), Vector3::zeros()),
        altitude: 1.5,
        reference: ReferenceTrajectory::new(vec![p], cfg.cruise_speed, AltitudePolicy::WorldZ(1.5)).unwrap(),
    };
    let traj = fly(&case, &cfg, Split::Train).unwrap();
    assert!(traj.samples.iter().all(|s| (s.height - 1.5).abs() < 0.01));
    let n = traj.samples.len();
    let ends: Vec<usize> = (0..8).map(|i| n - 1 - 5 * i).collect();
    let mut m = HeightModel::new(model_cfg(16), 2).unwrap();
    overfit(&mut m, &traj, &ends, 200, 3e-4);
    let frames: Vec<&[f32]> = m.config.window_indices(n - 1).map(|i| traj.samples[i].depth.as_slice()).collect();
    let d = predict_height(&mut m, &frames).unwrap();
    assert!((d[d.len() - 1] - 1.5).abs() <= 0.05, "d̂ = {}", d[d.len() - 1]);
}

#[test]
fn evaluate_oracles() {
    let (_, a) = table_flight(8, 1);
    let (_, b) = table_flight(8, 2);
    let trajs = vec![a, b];
    let ige = trajs[0].meta.ground_effect.identified();
    let perfect: Vec<Vec<f64>> = trajs.iter().map(|t| t.samples.iter().map(|s| s.height).collect()).collect();
    let m = metrics_from_predictions(&trajs, &perfect, Split::Test, &ige).unwrap();
    assert_eq!(m.rows.len(), 3);
    assert_eq!(m.total().rmse_d, 0.0);
    assert!(m.total().rmse_fa <= 1e-15 * trajs[0].samples[0].fa.abs().max(1e-12), "{}", m.total().rmse_fa);
    assert_eq!(m.total().n_samples, trajs[0].samples.len() + trajs[1].samples.len());

    let biased: Vec<Vec<f64>> = perfect.iter().map(|p| p.iter().map(|d| d + 0.1).collect()).collect();
    let m = metrics_from_predictions(&trajs, &biased, Split::Test, &ige).unwrap();
    for r in &m.rows {
        assert!((r.rmse_d - 0.1).abs() < 1e-12, "{}", r.rmse_d);
    }
    let csv = m.to_csv();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("test,all,"));
}

#[test]
fn force_error_is_amplified_near_the_ground() {
    let drone = turbest::DroneParams::default();
    let gep = GroundEffectParams::for_drone(&drone, 0.023);
    let ige = gep.identified();
    let cmd = drone.hover_speed();
    let rel = |d: f64| {
        let truth = predicted_force(&ige, &cmd, d);
        (predicted_force(&ige, &cmd, 0.5 * d) - truth).abs()
    };
    let (near, far) = (rel(0.1), rel(1.0));
    // the law scales as 1/d², so the same relative error costs ~100x more
    assert!(near > 50.0 * far, "near {near} far {far}");
    assert!(predicted_force(&ige, &cmd, 1e-9).is_finite());
}

#[test]
fn evaluation_is_deterministic_across_threads() {
    let (_, a) = table_flight(8, 3);
    let (_, b) = table_flight(8, 4);
    let trajs = vec![a, b];
    let cfg = ModelConfig {
        resolution: 8,
        channels: vec![4, 4, 4],
        ..ModelConfig::default()
    };
    let m = HeightModel::new(cfg, 9).unwrap();
    let ige = trajs[0].meta.ground_effect.identified();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| evaluate(&m, &trajs, Split::Val, &ige).unwrap())
    };
    assert_eq!(run(1).to_csv(), run(3).to_csv());
}

#[test]
fn recalibrated_inference_matches_training_mode() {
    let (_, traj) = table_flight(16, 6);
    let frames: Vec<&[f32]> = traj.samples.iter().step_by(7).take(24).map(|s| s.depth.as_slice()).collect();
    let mut m = HeightModel::new(model_cfg(16), 4).unwrap();
    let x = frames_tensor(&frames, &m.config).unwrap();
    let train = m.clone().embed(&x, Mode::Train).unwrap();
    m.recalibrate(&x).unwrap();
    let infer = m.embed(&x, Mode::Infer).unwrap();
    let diff = train.data().iter().zip(infer.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff}");
}

/// Full desk-scale pretraining run; about ten minutes per seed on one core.
#[test]
#[ignore]
fn desk_pretraining_halves_the_loss() {
    use std::collections::BTreeMap;
    use turbest::dataset::{generate_dataset, Dataset};

    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&desk(32), dir.path(), 1).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let train = ds.load_split(Split::Train).unwrap();
    let mut worlds = BTreeMap::new();
    for t in &train {
        worlds.entry(t.meta.world_seed).or_insert_with(|| ds.load_world(&t.meta).unwrap());
    }
    let mut ratios = Vec::new();
    for seed in 0..2 {
        let pairs = pretrain_pairs(&train, &worlds, 2000, seed).unwrap();
        let cfg = PretrainConfig {
            seed,
            ..PretrainConfig::default()
        };
        let (_, report) = pretrain_transcoder(&pairs, model_cfg(32), PretrainTarget::Normals, &cfg).unwrap();
        ratios.push(report.final_loss / report.initial_loss);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean <= 0.5, "final/initial loss ratios {ratios:?}");
}
