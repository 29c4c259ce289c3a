use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use turbest::dataset::{generate_dataset, simulate_trajectory, Dataset, Split, Trajectory, TrajectoryMeta};
use turbest::estimator::{
    evaluate, metrics_from_predictions, predict_trajectory, predicted_force, pretrain_pairs, pretrain_transcoder,
    train_height, HeightModel, Metrics, Transcoder,
};
use turbest::nn::{read_checkpoint, write_checkpoint};
use turbest::planner::{build_reference, track, AltitudePolicy, Controller, ReferenceTrajectory};
use turbest::scenes::room;
use turbest::sysid::{
    extract_gt_turbulence, fit_ground_effect, identify_theta, FitConfig, FlightLog, GroundEffectSample, IdentifyConfig,
    ThetaParams,
};
use turbest::world::{build_navgrid, generate_world, Aabb, World};
use turbest::{DroneParams, GroundEffectParams};

use crate::config::RunConfig;

pub const IDENTIFY_MAGIC: &str = "turbest-identify";
pub const SIMULATE_HEADER: &str = "t,d,d_hat,f_a,f_a_hat";
pub const TRAIN_LOG_HEADER: &str = "epoch,stage,train_loss,val_rmse";
pub const PRETRAIN_LOG_HEADER: &str = "epoch,loss";

/// Resolved inputs shared by every command.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    fn dataset_dir(&self) -> PathBuf {
        self.config.dataset.dir.clone().unwrap_or_else(|| self.out.join("dataset"))
    }

    fn model_path(&self, configured: &Option<PathBuf>) -> PathBuf {
        configured.clone().unwrap_or_else(|| self.out.join("model.ckpt"))
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.out.join(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

fn open_dataset(run: &Run) -> Result<Dataset> {
    let dir = run.dataset_dir();
    Dataset::open(&dir).with_context(|| format!("opening dataset {} (run `gen` first)", dir.display()))
}

fn load_model(path: &Path) -> Result<HeightModel> {
    let ckpt = read_checkpoint(path).with_context(|| format!("loading model {}", path.display()))?;
    Ok(HeightModel::from_checkpoint(&ckpt)?)
}

pub fn gen(run: &Run, threads: usize) -> Result<()> {
    let cfg = run.config.dataset_config()?;
    let dir = run.dataset_dir();
    info!("generating {} worlds into {}", cfg.worlds, dir.display());
    let report = generate_dataset(&cfg, &dir, threads)?;
    info!(
        "wrote {} trajectories ({} samples); {} slots failed",
        report.trajectories, report.samples, report.failed_slots
    );
    Ok(())
}

fn load_worlds(ds: &Dataset, trajs: &[Trajectory]) -> Result<BTreeMap<u64, World>> {
    let mut worlds = BTreeMap::new();
    for t in trajs {
        if !worlds.contains_key(&t.meta.world_seed) {
            worlds.insert(t.meta.world_seed, ds.load_world(&t.meta)?);
        }
    }
    Ok(worlds)
}

pub fn pretrain(run: &Run) -> Result<()> {
    let ds = open_dataset(run)?;
    let train = ds.load_split(Split::Train)?;
    let worlds = load_worlds(&ds, &train)?;
    let (pcfg, target) = run.config.pretrain_config();
    let pairs = pretrain_pairs(&train, &worlds, run.config.pretrain.pairs, run.config.seed)?;
    info!("pretraining on {} pairs, target {:?}", pairs.len(), target);
    let (tc, report) = pretrain_transcoder(&pairs, run.config.model_config(), target, &pcfg)?;
    info!("transcoder loss {:.6e} -> {:.6e}", report.initial_loss, report.final_loss);

    let mut log = format!("{PRETRAIN_LOG_HEADER}\n");
    for (i, l) in report.epoch_loss.iter().enumerate() {
        writeln!(log, "{},{l:?}", i + 1)?;
    }
    run.write("pretrain_loss.csv", &log)?;
    let steps = report.epoch_loss.len() as u64;
    write_checkpoint(&run.out.join("transcoder.ckpt"), &tc.to_checkpoint(run.config.seed, steps))?;
    Ok(())
}

fn mean_height(trajs: &[Trajectory]) -> Result<f64> {
    let (sum, n) = trajs
        .iter()
        .flat_map(|t| &t.samples)
        .fold((0.0, 0usize), |(s, n), x| (s + x.height, n + 1));
    ensure!(n > 0, "training split is empty");
    Ok(sum / n as f64)
}

pub fn train(run: &Run) -> Result<()> {
    let ds = open_dataset(run)?;
    let train = ds.load_split(Split::Train)?;
    let val = ds.load_split(Split::Val)?;
    let cfg = run.config.model_config();
    let seed = run.config.seed;
    let mut model = if run.config.train.encoder == "pretrained" {
        let path = run.config.train.transcoder.clone().unwrap_or_else(|| run.out.join("transcoder.ckpt"));
        let ckpt = read_checkpoint(&path).with_context(|| format!("loading transcoder {} (run `pretrain` first)", path.display()))?;
        let tc = Transcoder::from_checkpoint(&ckpt)?;
        let enc_cfg = turbest::estimator::ModelConfig {
            window: cfg.window,
            frame_stride: cfg.frame_stride,
            gru_hidden: cfg.gru_hidden,
            gru_layers: cfg.gru_layers,
            head_hidden: cfg.head_hidden,
            ..tc.config.clone()
        };
        ensure!(
            enc_cfg == cfg,
            "transcoder {} was built with a different encoder configuration",
            path.display()
        );
        HeightModel::with_encoder(cfg, tc.encoder, seed)?
    } else {
        HeightModel::new(cfg, seed)?
    };
    model.set_output_height(mean_height(&train)?);
    info!("training on {} trajectories, validating on {}", train.len(), val.len());
    let (model, report) = train_height(model, &train, &val, &run.config.train_config())?;
    info!("best validation RMSE(d) {:.4} m", report.best_val_rmse);

    let mut log = format!("{TRAIN_LOG_HEADER}\n");
    for (i, (l, v)) in report.train_loss.iter().zip(&report.val_rmse).enumerate() {
        let stage = if i < report.stage1_epochs { 1 } else { 2 };
        writeln!(log, "{},{stage},{l:?},{v:?}", i + 1)?;
    }
    run.write("train_log.csv", &log)?;
    let steps = report.train_loss.len() as u64;
    write_checkpoint(&run.out.join("model.ckpt"), &model.to_checkpoint(seed, steps))?;
    Ok(())
}

pub fn eval(run: &Run) -> Result<Metrics> {
    let ds = open_dataset(run)?;
    let split: Split = run.config.eval.split.parse()?;
    let trajs = ds.load_split(split)?;
    ensure!(!trajs.is_empty(), "split {split} has no trajectories");
    let ige = trajs[0].meta.ground_effect.identified();
    let metrics = match run.config.eval.predictor.as_str() {
        "model" => {
            let model = load_model(&run.model_path(&run.config.eval.model))?;
            evaluate(&model, &trajs, split, &ige)?
        }
        "oracle" => {
            let preds: Vec<Vec<f64>> = trajs.iter().map(|t| t.samples.iter().map(|s| s.height).collect()).collect();
            metrics_from_predictions(&trajs, &preds, split, &ige)?
        }
        _ => {
            let mean = mean_height(&ds.load_split(Split::Train)?)?;
            let preds: Vec<Vec<f64>> = trajs.iter().map(|t| vec![mean; t.samples.len()]).collect();
            metrics_from_predictions(&trajs, &preds, split, &ige)?
        }
    };
    let total = metrics.total();
    info!(
        "{split}: {} samples, RMSE(d) {:.4} m, RMSE(f_a) {:.4e} N",
        total.n_samples, total.rmse_d, total.rmse_fa
    );
    run.write("metrics.csv", &metrics.to_csv())?;
    Ok(metrics)
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// A log with heights over ground and the parameters it was flown with.
struct LoadedLog {
    log: FlightLog,
    heights: Vec<f64>,
    drone: DroneParams,
    radius: f64,
}

fn load_log(run: &Run, path: &Path) -> Result<LoadedLog> {
    if path.is_dir() {
        let traj = Trajectory::read(path)?;
        let dt = traj.meta.dt;
        let log = FlightLog::new(
            (0..traj.samples.len()).map(|i| i as f64 * dt).collect(),
            traj.samples.iter().map(|s| s.state.clone()).collect(),
            traj.samples.iter().map(|s| s.rotors.clone()).collect(),
        )?;
        let heights = traj.samples.iter().map(|s| s.height).collect();
        return Ok(LoadedLog {
            log,
            heights,
            radius: traj.meta.ground_effect.radius,
            drone: traj.meta.drone,
        });
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let log = FlightLog::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    let heights = match &run.config.identify.world {
        Some(w) => {
            let text = fs::read_to_string(w).with_context(|| format!("reading {}", w.display()))?;
            let world = World::from_manifest(&text)?;
            log.states
                .iter()
                .map(|s| world.height_over_ground(&s.position))
                .collect::<turbest::Result<Vec<_>>>()?
        }
        None => log.states.iter().map(|s| s.position.z).collect(),
    };
    Ok(LoadedLog {
        log,
        heights,
        drone: DroneParams::default(),
        radius: run.config.identify.prop_radius,
    })
}

pub fn identify(run: &Run, log_path: Option<&Path>) -> Result<String> {
    let path = log_path
        .map(Path::to_path_buf)
        .or_else(|| run.config.identify.log.clone())
        .context("no flight log given (use --log or identify.log)")?;
    let LoadedLog {
        log,
        heights,
        drone,
        radius,
    } = load_log(run, &path)?;
    let icfg = IdentifyConfig {
        smoothing_window: run.config.identify.smoothing_window,
        ..IdentifyConfig::default()
    };
    let nominal = ThetaParams::from_params(&drone);

    let mut r = format!("{IDENTIFY_MAGIC} 1\n");
    writeln!(r, "log = {}", path.display())?;
    writeln!(r, "samples = {}", log.len())?;
    writeln!(r, "dt = {:?}", log.dt())?;
    match identify_theta(&log, &drone.mixer, &icfg) {
        Ok(theta) => {
            writeln!(r, "theta_fit = ok")?;
            for (i, (t, n)) in theta.as_array().iter().zip(nominal.as_array()).enumerate() {
                writeln!(r, "theta{i} = {t:?} nominal = {n:?} relative_error = {:?}", ((t - n) / n).abs())?;
            }
            writeln!(r, "theta_max_relative_error = {:?}", theta.max_relative_error(&nominal))?;
        }
        Err(e) => {
            warn!("theta identification skipped: {e}");
            writeln!(r, "theta_fit = skipped: {e}")?;
        }
    }

    let res = extract_gt_turbulence(&log, &drone)?;
    let samples: Vec<GroundEffectSample> = res
        .vertical_force
        .iter()
        .zip(&heights)
        .zip(&log.commands)
        .map(|((&f, &d), cmd)| GroundEffectSample::new(f, d, cmd))
        .collect();
    let before = rms(samples.iter().map(|s| s.force));
    writeln!(r, "residual_rms_before = {before:?}")?;
    let init = GroundEffectParams::for_drone(&drone, radius).identified();
    match fit_ground_effect(&samples, &init, &FitConfig::default()) {
        Ok(fit) => {
            let p = fit.params;
            let after = rms(samples.iter().map(|s| s.force - p.raw(s.sum_sq, s.height)));
            writeln!(r, "ground_effect_fit = ok")?;
            writeln!(r, "alpha = {:?} nominal = {:?}", p.alpha, init.alpha)?;
            writeln!(r, "beta = {:?} nominal = {:?}", p.beta, init.beta)?;
            writeln!(r, "fit_iterations = {}", fit.iterations)?;
            writeln!(r, "residual_rms_after = {after:?}")?;
        }
        Err(e) => {
            warn!("ground-effect fit skipped: {e}");
            writeln!(r, "ground_effect_fit = skipped: {e}")?;
            writeln!(r, "residual_rms_after = {before:?}")?;
        }
    }
    info!("identify report:\n{r}");
    run.write("identify.txt", &r)?;
    Ok(r)
}

/// Table of the "table" scenario: 1.2 m long, 0.6 m high, centered at
/// x = 4 m across the flight line.
fn table_world(seed: u64) -> Result<World> {
    let table = Aabb::new(
        nalgebra::Vector3::new(3.4, 1.4, 0.0),
        nalgebra::Vector3::new(4.6, 2.6, 0.6),
    );
    Ok(room(vec![table], seed)?)
}

pub fn simulate(run: &Run) -> Result<usize> {
    let s = &run.config.simulate;
    let dcfg = run.config.dataset_config()?;
    let policy = AltitudePolicy::WorldZ(s.altitude);
    let mut track_cfg = dcfg.track.clone();
    track_cfg.hold_time = s.hold_time;

    let (world, reference) = match s.scenario.as_str() {
        "table" => {
            let world = table_world(run.config.seed)?;
            let pts = s.waypoints.clone().unwrap_or_else(|| vec![[0.8, 2.0], [4.0, 2.0]]);
            let pts = pts.iter().map(|p| nalgebra::Vector3::new(p[0], p[1], s.altitude)).collect();
            (world, ReferenceTrajectory::new(pts, dcfg.cruise_speed, policy)?)
        }
        _ => {
            let world = generate_world(s.world_seed, &dcfg.world)?;
            let reference = match &s.waypoints {
                Some(w) => {
                    let nav = build_navgrid(&world, dcfg.nav_radius, policy.grid_height(&world), dcfg.cell_size)?;
                    let pts: Vec<_> = w.iter().map(|p| nalgebra::Vector2::new(p[0], p[1])).collect();
                    build_reference(
                        &world,
                        &nav,
                        &pts,
                        policy,
                        dcfg.cruise_speed,
                        dcfg.nav_radius - dcfg.cell_size / 2.0,
                    )?
                }
                None => {
                    // fly the planner's own tour; only the samples are used
                    let mut cfg = dcfg.clone();
                    cfg.altitude_range = (s.altitude, s.altitude);
                    cfg.track = track_cfg.clone();
                    let (samples, altitude) = simulate_trajectory(&world, &cfg, run.config.seed)?;
                    return finish_simulation(run, &dcfg, &world, samples, altitude);
                }
            };
            (world, reference)
        }
    };
    let gep = GroundEffectParams::for_drone(&dcfg.drone, dcfg.prop_radius);
    let ctl = Controller::new(&dcfg.drone, dcfg.controller.clone())?;
    let rollout = track(&world, &dcfg.drone, &gep, &reference, &ctl, &track_cfg)?;
    if rollout.collided {
        bail!("vehicle collided after {} frames", rollout.samples.len());
    }
    finish_simulation(run, &dcfg, &world, rollout.samples, policy)
}

fn finish_simulation(
    run: &Run,
    dcfg: &turbest::dataset::DatasetConfig,
    world: &World,
    samples: Vec<turbest::planner::TrajectorySample>,
    altitude: AltitudePolicy,
) -> Result<usize> {
    let traj = Trajectory {
        meta: TrajectoryMeta {
            world: String::new(),
            world_seed: world.seed,
            traj_seed: run.config.seed,
            split: Split::Test,
            dt: dcfg.track.frame_dt(),
            drone: dcfg.drone.clone(),
            ground_effect: GroundEffectParams::for_drone(&dcfg.drone, dcfg.prop_radius),
            camera: dcfg.track.camera,
            camera_pitch: dcfg.track.camera_pitch,
            altitude,
        },
        samples,
    };
    let d_hat = if run.config.simulate.predictor == "model" {
        let mut model = load_model(&run.model_path(&run.config.simulate.model))?;
        ensure!(
            model.config.resolution == dcfg.track.camera.width,
            "model expects {0}x{0} frames but the camera renders {1}x{1}",
            model.config.resolution,
            dcfg.track.camera.width
        );
        predict_trajectory(&mut model, &traj)?
    } else {
        traj.samples.iter().map(|s| s.height).collect()
    };
    let ige = traj.meta.ground_effect.identified();
    let mut csv = format!("{SIMULATE_HEADER}\n");
    for (i, (s, dh)) in traj.samples.iter().zip(&d_hat).enumerate() {
        let t = i as f64 * traj.meta.dt;
        let fa_hat = predicted_force(&ige, &s.rotors, *dh);
        println!(
            "t={t:7.3} z={:6.3} d={:6.3} d_hat={dh:6.3} f_a={:9.3e} f_a_hat={fa_hat:9.3e}",
            s.state.position.z, s.height, s.fa
        );
        writeln!(csv, "{t:?},{:?},{dh:?},{:?},{fa_hat:?}", s.height, s.fa)?;
    }
    run.write("simulate.csv", &csv)?;
    Ok(traj.samples.len())
}
