//! Run configuration: a single TOML file, every key optional except
//! `version`, unknown keys rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use turbest::dataset::{AltitudeMode, DatasetConfig};
use turbest::estimator::{ModelConfig, PretrainConfig, PretrainTarget, StageConfig, TrainConfig};
use turbest::world::CameraIntrinsics;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub identify: IdentifySection,
    pub simulate: SimulateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            identify: IdentifySection::default(),
            simulate: SimulateSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Dataset directory; defaults to `<out>/dataset`.
    pub dir: Option<PathBuf>,
    pub worlds: usize,
    pub trajectories_per_world: usize,
    pub waypoints: usize,
    pub val_worlds: usize,
    pub test_worlds: usize,
    /// Square depth resolution (pixels).
    pub resolution: usize,
    pub fov_y: f64,
    pub max_depth: f64,
    pub camera_pitch_deg: f64,
    pub cruise_speed: f64,
    /// "world_z" or "clearance".
    pub altitude_mode: String,
    pub altitude_min: f64,
    pub altitude_max: f64,
    pub prop_radius: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            dir: None,
            worlds: d.worlds,
            trajectories_per_world: d.trajectories_per_world,
            waypoints: d.waypoints,
            val_worlds: d.val_worlds,
            test_worlds: d.test_worlds,
            resolution: 32,
            fov_y: d.track.camera.fov_y,
            max_depth: d.track.camera.max_depth,
            camera_pitch_deg: 15.0,
            cruise_speed: d.cruise_speed,
            altitude_mode: "world_z".into(),
            altitude_min: d.altitude_range.0,
            altitude_max: d.altitude_range.1,
            prop_radius: d.prop_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub channels: Vec<usize>,
    pub first_kernel: usize,
    pub kernel: usize,
    pub mlp_hidden: usize,
    pub embedding: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub head_hidden: usize,
    pub window: usize,
    pub frame_stride: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            channels: m.channels,
            first_kernel: m.first_kernel,
            kernel: m.kernel,
            mlp_hidden: m.mlp_hidden,
            embedding: m.embedding,
            gru_hidden: m.gru_hidden,
            gru_layers: m.gru_layers,
            head_hidden: m.head_hidden,
            window: m.window,
            frame_stride: m.frame_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    /// "normals" or "depth".
    pub target: String,
    pub pairs: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub lambda: f64,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            target: "normals".into(),
            pairs: 2000,
            epochs: p.epochs,
            lr: p.lr,
            batch: p.batch,
            lambda: p.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// "pretrained" (encoder from `<out>/transcoder.ckpt`) or "scratch".
    pub encoder: String,
    /// Transcoder checkpoint; defaults to `<out>/transcoder.ckpt`.
    pub transcoder: Option<PathBuf>,
    pub batch: usize,
    pub stage1_lr: f64,
    pub stage1_epochs: usize,
    pub stage2_lr: f64,
    pub stage2_epochs: usize,
    pub patience: usize,
    pub sample_stride: usize,
    pub val_stride: usize,
    /// Training windows per epoch; 0 uses all.
    pub max_windows: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            encoder: "pretrained".into(),
            transcoder: None,
            batch: t.batch,
            stage1_lr: t.stage1.lr,
            stage1_epochs: t.stage1.max_epochs,
            stage2_lr: t.stage2.lr,
            stage2_epochs: t.stage2.max_epochs,
            patience: t.stage1.patience,
            sample_stride: t.sample_stride,
            val_stride: t.val_stride,
            max_windows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// "train", "val" or "test".
    pub split: String,
    /// "model", "oracle" (d̂ = d) or "mean" (training-mean height).
    pub predictor: String,
    /// Model checkpoint; defaults to `<out>/model.ckpt`.
    pub model: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            split: "test".into(),
            predictor: "model".into(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifySection {
    /// Flight log: a CSV file or a dataset trajectory directory.
    pub log: Option<PathBuf>,
    /// World manifest giving heights for CSV logs; a flat floor at z = 0
    /// when absent.
    pub world: Option<PathBuf>,
    pub smoothing_window: usize,
    pub prop_radius: f64,
}

impl Default for IdentifySection {
    fn default() -> Self {
        Self {
            log: None,
            world: None,
            smoothing_window: 1,
            prop_radius: DatasetConfig::default().prop_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// "table" or "world".
    pub scenario: String,
    /// World seed for the "world" scenario.
    pub world_seed: u64,
    /// Reference waypoints `[x, y]`; scenario default when absent.
    pub waypoints: Option<Vec<[f64; 2]>>,
    pub altitude: f64,
    pub hold_time: f64,
    /// "oracle" (d̂ = d) or "model".
    pub predictor: String,
    /// Model checkpoint; defaults to `<out>/model.ckpt`.
    pub model: Option<PathBuf>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            scenario: "table".into(),
            world_seed: 0,
            waypoints: None,
            altitude: 1.0,
            hold_time: 2.0,
            predictor: "oracle".into(),
            model: None,
        }
    }
}

fn one_of(field: &str, value: &str, allowed: &[&str]) -> Result<()> {
    ensure!(allowed.contains(&value), "{field} must be one of {allowed:?}, got {value:?}");
    Ok(())
}

impl RunConfig {
    /// Reads a TOML file; the `version` key is mandatory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)?;
        if !table.contains_key("version") {
            bail!("missing `version` key (current version is {CONFIG_VERSION})");
        }
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.version == CONFIG_VERSION,
            "unsupported config version {} (expected {CONFIG_VERSION})",
            self.version
        );
        self.dataset_config()?.validate()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        one_of("pretrain.target", &self.pretrain.target, &["normals", "depth"])?;
        ensure!(self.pretrain.pairs > 0, "pretrain.pairs must be positive");
        ensure!(self.pretrain.batch >= 2, "pretrain.batch must be at least 2");
        ensure!(self.pretrain.lr > 0.0 && self.pretrain.lambda >= 0.0, "pretrain.lr and lambda must be positive");
        one_of("train.encoder", &self.train.encoder, &["pretrained", "scratch"])?;
        one_of("eval.split", &self.eval.split, &["train", "val", "test"])?;
        one_of("eval.predictor", &self.eval.predictor, &["model", "oracle", "mean"])?;
        ensure!(self.identify.smoothing_window >= 1, "identify.smoothing_window must be at least 1");
        ensure!(self.identify.prop_radius > 0.0, "identify.prop_radius must be positive");
        one_of("simulate.scenario", &self.simulate.scenario, &["table", "world"])?;
        one_of("simulate.predictor", &self.simulate.predictor, &["oracle", "model"])?;
        if let Some(w) = &self.simulate.waypoints {
            ensure!(!w.is_empty(), "simulate.waypoints is empty: give at least one [x, y] point");
        }
        ensure!(
            self.simulate.altitude > 0.0 && self.simulate.hold_time >= 0.0,
            "simulate.altitude must be positive and hold_time non-negative"
        );
        Ok(())
    }

    pub fn camera(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            width: self.dataset.resolution,
            height: self.dataset.resolution,
            fov_y: self.dataset.fov_y,
            max_depth: self.dataset.max_depth,
        }
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let d = &self.dataset;
        let mut c = DatasetConfig {
            seed: self.seed,
            worlds: d.worlds,
            trajectories_per_world: d.trajectories_per_world,
            waypoints: d.waypoints,
            val_worlds: d.val_worlds,
            test_worlds: d.test_worlds,
            cruise_speed: d.cruise_speed,
            altitude_mode: match d.altitude_mode.as_str() {
                "world_z" => AltitudeMode::WorldZ,
                "clearance" => AltitudeMode::Clearance,
                other => bail!("dataset.altitude_mode must be \"world_z\" or \"clearance\", got {other:?}"),
            },
            altitude_range: (d.altitude_min, d.altitude_max),
            prop_radius: d.prop_radius,
            ..DatasetConfig::default()
        };
        c.track.camera = self.camera();
        c.track.camera_pitch = d.camera_pitch_deg * std::f64::consts::PI / 180.0;
        Ok(c)
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            resolution: self.dataset.resolution,
            channels: m.channels.clone(),
            first_kernel: m.first_kernel,
            kernel: m.kernel,
            mlp_hidden: m.mlp_hidden,
            embedding: m.embedding,
            gru_hidden: m.gru_hidden,
            gru_layers: m.gru_layers,
            head_hidden: m.head_hidden,
            window: m.window,
            frame_stride: m.frame_stride,
            max_depth: self.dataset.max_depth,
        }
    }

    pub fn pretrain_config(&self) -> (PretrainConfig, PretrainTarget) {
        let p = &self.pretrain;
        let target = if p.target == "depth" {
            PretrainTarget::Depth
        } else {
            PretrainTarget::Normals
        };
        (
            PretrainConfig {
                seed: self.seed,
                lr: p.lr,
                epochs: p.epochs,
                batch: p.batch,
                lambda: p.lambda,
            },
            target,
        )
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            seed: self.seed,
            batch: t.batch,
            stage1: StageConfig {
                lr: t.stage1_lr,
                max_epochs: t.stage1_epochs,
                patience: t.patience,
            },
            stage2: StageConfig {
                lr: t.stage2_lr,
                max_epochs: t.stage2_epochs,
                patience: t.patience,
            },
            sample_stride: t.sample_stride,
            val_stride: t.val_stride,
            max_windows_per_epoch: (t.max_windows > 0).then_some(t.max_windows),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_and_missing_keys() {
        assert!(RunConfig::parse("version = 1\nsede = 3\n").is_err());
        assert!(RunConfig::parse("version = 1\n[train]\nlr = 3\n").is_err());
        assert!(RunConfig::parse("seed = 3\n").is_err());
        let c = RunConfig::parse("version = 1\nseed = 7\n[dataset]\nworlds = 5\n").unwrap();
        assert_eq!((c.seed, c.dataset.worlds, c.dataset.resolution), (7, 5, 32));
    }

    #[test]
    fn semantic_validation() {
        let mut c = RunConfig::default();
        c.version = 2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.simulate.waypoints = Some(vec![]);
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.dataset.resolution = 24;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.eval.predictor = "psychic".into();
        assert!(c.validate().is_err());
    }
}
