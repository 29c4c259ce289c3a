//! Height-over-ground estimation from depth sequences.
//!
//! A strided convolutional encoder maps each depth frame to an embedding,
//! a stacked GRU integrates a window of embeddings and an MLP with a
//! softplus output predicts the height at every step. The encoder can be
//! pretrained as half of a transcoder that decodes depth into surface
//! normals (or back into depth, for the ablation).

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Split, Trajectory};
use crate::error::{Error, Result};
use crate::groundfx::{cheeseman_identified, IdentifiedGroundEffect};
use crate::nn::{
    softplus, softplus_grad, Adam, BatchNorm, Checkpoint, Conv2d, Gru, Layer, Linear, Mode, Param, Relu, Reshape,
    Sequential, Tensor, Upsample2x,
};
use crate::world::{render_normals, World};

/// Smallest height the head reports (m); keeps the output strictly positive
/// where softplus underflows.
const MIN_HEIGHT: f64 = 1e-9;

/// Architecture of the encoder, decoder and height head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Square input resolution (pixels), a power of two.
    pub resolution: usize,
    /// Output channels of the stride-2 convolutions.
    pub channels: Vec<usize>,
    pub first_kernel: usize,
    pub kernel: usize,
    /// Hidden width of the encoder/decoder MLP.
    pub mlp_hidden: usize,
    pub embedding: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub head_hidden: usize,
    /// History window H (frames fed to the GRU).
    pub window: usize,
    /// Recorded frames between consecutive window entries.
    pub frame_stride: usize,
    /// Range used to normalize depth input to [0, 1] (m).
    pub max_depth: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            channels: vec![16, 32, 64, 64, 32, 4],
            first_kernel: 7,
            kernel: 3,
            mlp_hidden: 64,
            embedding: 50,
            gru_hidden: 50,
            gru_layers: 2,
            head_hidden: 32,
            window: 10,
            frame_stride: 10,
            max_depth: 10.0,
        }
    }
}

impl ModelConfig {
    /// Spatial size after each encoder convolution, starting with the input.
    pub fn encoder_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.resolution];
        for i in 0..self.channels.len() {
            let k = if i == 0 { self.first_kernel } else { self.kernel };
            let s = *sizes.last().expect("non-empty");
            sizes.push((s + 2 * (k / 2) - k) / 2 + 1);
        }
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("model config: {m}")));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be non-empty and positive");
        }
        if self.first_kernel % 2 == 0 || self.kernel % 2 == 0 {
            return bad("kernels must be odd");
        }
        if !self.resolution.is_power_of_two() || self.resolution < 8 {
            return bad("resolution must be a power of two, at least 8");
        }
        let last = *self.encoder_sizes().last().expect("non-empty");
        if !(self.resolution / last).is_power_of_two() || self.resolution % last != 0 {
            return bad("encoder output size must divide the resolution by a power of two");
        }
        if [self.mlp_hidden, self.embedding, self.gru_hidden, self.gru_layers, self.head_hidden, self.window, self.frame_stride]
            .contains(&0)
        {
            return bad("sizes must be positive");
        }
        if !(self.max_depth > 0.0) {
            return bad("max depth must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        let ch = self.channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("resolution".into(), self.resolution.to_string()),
            ("channels".into(), ch),
            ("first_kernel".into(), self.first_kernel.to_string()),
            ("kernel".into(), self.kernel.to_string()),
            ("mlp_hidden".into(), self.mlp_hidden.to_string()),
            ("embedding".into(), self.embedding.to_string()),
            ("gru_hidden".into(), self.gru_hidden.to_string()),
            ("gru_layers".into(), self.gru_layers.to_string()),
            ("head_hidden".into(), self.head_hidden.to_string()),
            ("window".into(), self.window.to_string()),
            ("frame_stride".into(), self.frame_stride.to_string()),
            ("max_depth".into(), format!("{:?}", self.max_depth)),
        ]
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            c.config_value(k)
                .ok_or_else(|| Error::format("checkpoint", format!("missing config {k}")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::format("checkpoint", format!("bad config {k}")))
        };
        let channels = get("channels")?
            .split(',')
            .map(|s| s.parse::<usize>().map_err(|_| Error::format("checkpoint", "bad channels")))
            .collect::<Result<Vec<_>>>()?;
        let cfg = Self {
            resolution: int("resolution")?,
            channels,
            first_kernel: int("first_kernel")?,
            kernel: int("kernel")?,
            mlp_hidden: int("mlp_hidden")?,
            embedding: int("embedding")?,
            gru_hidden: int("gru_hidden")?,
            gru_layers: int("gru_layers")?,
            head_hidden: int("head_hidden")?,
            window: int("window")?,
            frame_stride: int("frame_stride")?,
            max_depth: get("max_depth")?
                .parse()
                .map_err(|_| Error::format("checkpoint", "bad max_depth"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Frame indices of the window ending at `t`; early frames repeat
    /// frame 0.
    pub fn window_indices(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.window).map(move |j| t.saturating_sub((self.window - 1 - j) * self.frame_stride))
    }
}

/// Convolutional encoder: depth `[N, 1, R, R]` → embedding `[N, E]`.
pub fn build_encoder(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Sequential> {
    cfg.validate()?;
    let sizes = cfg.encoder_sizes();
    let mut layers = Vec::new();
    let mut c_in = 1;
    for (i, &c) in cfg.channels.iter().enumerate() {
        let k = if i == 0 { cfg.first_kernel } else { cfg.kernel };
        let mut conv = Conv2d::new(&format!("enc.conv{i}"), c_in, c, k, 2, k / 2, rng);
        conv.propagate = i > 0;
        layers.push(Layer::Conv(conv));
        layers.push(Layer::BatchNorm(BatchNorm::new(&format!("enc.bn{i}"), c)));
        layers.push(Layer::Relu(Relu::default()));
        c_in = c;
    }
    let s = *sizes.last().expect("non-empty");
    let flat = c_in * s * s;
    layers.push(Layer::Reshape(Reshape::new(vec![flat])));
    layers.push(Layer::Linear(Linear::new("enc.fc0", flat, cfg.mlp_hidden, rng)));
    layers.push(Layer::Relu(Relu::default()));
    layers.push(Layer::Linear(Linear::new("enc.fc1", cfg.mlp_hidden, cfg.embedding, rng)));
    Ok(Sequential::new(layers))
}

/// Mirror of the encoder with nearest-neighbour upsampling; outputs
/// `[N, out_channels, R, R]`.
pub fn build_decoder(cfg: &ModelConfig, out_channels: usize, rng: &mut impl Rng) -> Result<Sequential> {
    cfg.validate()?;
    let s = *cfg.encoder_sizes().last().expect("non-empty");
    let c_last = *cfg.channels.last().expect("non-empty");
    let mut layers = vec![
        Layer::Linear(Linear::new("dec.fc0", cfg.embedding, cfg.mlp_hidden, rng)),
        Layer::Relu(Relu::default()),
        Layer::Linear(Linear::new("dec.fc1", cfg.mlp_hidden, c_last * s * s, rng)),
        Layer::Relu(Relu::default()),
        Layer::Reshape(Reshape::new(vec![c_last, s, s])),
    ];
    let stages = (cfg.resolution / s).trailing_zeros() as usize;
    let rev: Vec<usize> = cfg.channels.iter().rev().copied().collect();
    let mut c_in = c_last;
    for i in 0..stages {
        let c_out = rev.get(i + 1).copied().unwrap_or(cfg.channels[0]);
        layers.push(Layer::Upsample(Upsample2x::default()));
        layers.push(Layer::Conv(Conv2d::new(&format!("dec.conv{i}"), c_in, c_out, cfg.kernel, 1, cfg.kernel / 2, rng)));
        layers.push(Layer::BatchNorm(BatchNorm::new(&format!("dec.bn{i}"), c_out)));
        layers.push(Layer::Relu(Relu::default()));
        c_in = c_out;
    }
    layers.push(Layer::Conv(Conv2d::new("dec.out", c_in, out_channels, cfg.kernel, 1, cfg.kernel / 2, rng)));
    Ok(Sequential::new(layers))
}

/// Stacks depth frames into `[N, 1, R, R]`, normalized by `max_depth`.
pub fn frames_tensor(frames: &[&[f32]], cfg: &ModelConfig) -> Result<Tensor> {
    let px = cfg.resolution * cfg.resolution;
    let mut data = Vec::with_capacity(frames.len() * px);
    for f in frames {
        if f.len() != px {
            return Err(Error::shape(format!(
                "depth frame has {} pixels, model expects {}x{}",
                f.len(),
                cfg.resolution,
                cfg.resolution
            )));
        }
        data.extend(f.iter().map(|&v| v as f64 / cfg.max_depth));
    }
    Tensor::new(vec![frames.len(), 1, cfg.resolution, cfg.resolution], data)
}

/// Encoder + GRU + head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightModel {
    pub config: ModelConfig,
    pub encoder: Sequential,
    pub gru: Gru,
    pub head: Sequential,
    dims: (usize, usize),
}

impl HeightModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&config, &mut rng)?;
        Self::with_encoder(config, encoder, seed)
    }

    /// Fresh GRU and head on top of an existing encoder.
    pub fn with_encoder(config: ModelConfig, encoder: Sequential, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::dataset::mix(seed, 0x4ead));
        let gru = Gru::new("gru", config.embedding, config.gru_hidden, config.gru_layers, &mut rng);
        let head = Sequential::new(vec![
            Layer::Linear(Linear::new("head.fc0", config.gru_hidden, config.head_hidden, &mut rng)),
            Layer::Relu(Relu::default()),
            Layer::Linear(Linear::new("head.fc1", config.head_hidden, 1, &mut rng)),
        ]);
        Ok(Self {
            config,
            encoder,
            gru,
            head,
            dims: (0, 0),
        })
    }

    /// Sets the output bias so an untrained head predicts `height`.
    pub fn set_output_height(&mut self, height: f64) {
        if let Some(Layer::Linear(l)) = self.head.layers.last_mut() {
            l.bias.value[0] = (height.exp_m1()).max(1e-12).ln();
        }
    }

    /// Whether the first convolution computes input gradients.
    pub fn set_input_gradient(&mut self, on: bool) {
        if let Some(Layer::Conv(c)) = self.encoder.layers.first_mut() {
            c.propagate = on;
        }
    }

    /// Replaces the batch-norm running statistics with the exact batch
    /// statistics of `frames` under the current parameters, so inference
    /// on that batch reproduces training mode.
    pub fn recalibrate(&mut self, frames: &Tensor) -> Result<()> {
        let mut x = frames.clone();
        for layer in &mut self.encoder.layers {
            if let Layer::BatchNorm(b) = layer {
                b.set_statistics(&x)?;
            }
            x = layer.forward(&x, Mode::Infer)?;
        }
        Ok(())
    }

    pub fn embed(&mut self, frames: &Tensor, mode: Mode) -> Result<Tensor> {
        self.encoder.forward(frames, mode)
    }

    /// Head pre-activations `[T·B]` from embeddings ordered step-major.
    pub fn head_forward(&mut self, e: &Tensor, steps: usize, batch: usize, mode: Mode) -> Result<Vec<f64>> {
        let emb = self.config.embedding;
        if e.len() != steps * batch * emb {
            return Err(Error::shape(format!(
                "expected {steps}x{batch} embeddings of size {emb}, got shape {:?}",
                e.shape()
            )));
        }
        let seq = e.clone().reshape(&[steps, batch, emb])?;
        let h = self.gru.forward(&seq, mode)?;
        let h = h.reshape(&[steps * batch, self.config.gru_hidden])?;
        self.dims = (steps, batch);
        Ok(self.head.forward(&h, mode)?.into_data())
    }

    /// Gradient w.r.t. the embeddings given gradients of the pre-activations.
    pub fn head_backward(&mut self, dz: &[f64]) -> Result<Tensor> {
        let (steps, batch) = self.dims;
        let dh = self.head.backward(&Tensor::new(vec![steps * batch, 1], dz.to_vec())?)?;
        let dh = dh.reshape(&[steps, batch, self.config.gru_hidden])?;
        self.gru.backward(&dh)?.reshape(&[steps * batch, self.config.embedding])
    }

    pub fn forward(&mut self, frames: &Tensor, steps: usize, batch: usize, mode: Mode) -> Result<Vec<f64>> {
        let e = self.embed(frames, mode)?;
        self.head_forward(&e, steps, batch, mode)
    }

    /// Returns the gradient w.r.t. the (normalized) input frames; zero when
    /// input gradients are disabled.
    pub fn backward(&mut self, dz: &[f64]) -> Result<Tensor> {
        let de = self.head_backward(dz)?;
        self.encoder.backward(&de)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.gru.params());
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.gru.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    fn head_params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.gru.params_mut();
        p.extend(self.head.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Checkpoint {
        let mut cfg = self.config.to_kv();
        cfg.push(("kind".into(), "height".into()));
        Checkpoint::from_params(seed, step, cfg, self.params())
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.config_value("kind") != Some("height") {
            return Err(Error::format("checkpoint", "not a height model"));
        }
        let mut m = Self::new(ModelConfig::from_checkpoint(c)?, c.seed)?;
        c.load_into(&mut m.params_mut())?;
        Ok(m)
    }
}

/// `d̂ = softplus(z)`, floored at [`MIN_HEIGHT`].
pub fn height_from_logit(z: f64) -> f64 {
    softplus(z).max(MIN_HEIGHT)
}

/// Mean squared height error over all outputs and its gradient w.r.t. the
/// pre-activations.
pub fn height_loss(z: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = z.len() as f64;
    let mut loss = 0.0;
    let grad = z
        .iter()
        .zip(target)
        .map(|(&zi, &t)| {
            let e = height_from_logit(zi) - t;
            loss += e * e;
            2.0 * e * softplus_grad(zi) / n
        })
        .collect();
    (loss / n, grad)
}

/// Heights for every step of one chronological window of depth frames.
pub fn predict_height(model: &mut HeightModel, frames: &[&[f32]]) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::invalid("empty depth sequence"));
    }
    let x = frames_tensor(frames, &model.config)?;
    let z = model.forward(&x, frames.len(), 1, Mode::Infer)?;
    Ok(z.into_iter().map(height_from_logit).collect())
}

/// Embeddings of every frame of a trajectory, `[n·E]`.
pub fn encode_trajectory(model: &mut HeightModel, traj: &Trajectory) -> Result<Vec<f64>> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(traj.samples.len() * model.config.embedding);
    for chunk in traj.samples.chunks(CHUNK) {
        let frames: Vec<&[f32]> = chunk.iter().map(|s| s.depth.as_slice()).collect();
        let x = frames_tensor(&frames, &model.config)?;
        out.extend_from_slice(model.embed(&x, Mode::Infer)?.data());
    }
    Ok(out)
}

/// Final-step predictions for every frame of a trajectory.
pub fn predict_trajectory(model: &mut HeightModel, traj: &Trajectory) -> Result<Vec<f64>> {
    let emb = encode_trajectory(model, traj)?;
    predict_from_embeddings(model, &emb, &(0..traj.samples.len()).collect::<Vec<_>>())
}

fn predict_from_embeddings(model: &mut HeightModel, emb: &[f64], frames: &[usize]) -> Result<Vec<f64>> {
    const CHUNK: usize = 512;
    let e_dim = model.config.embedding;
    let h = model.config.window;
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(CHUNK) {
        let b = chunk.len();
        let mut e = vec![0.0; h * b * e_dim];
        for (bi, &t) in chunk.iter().enumerate() {
            for (j, idx) in model.config.window_indices(t).enumerate() {
                let dst = (j * b + bi) * e_dim;
                e[dst..dst + e_dim].copy_from_slice(&emb[idx * e_dim..(idx + 1) * e_dim]);
            }
        }
        let z = model.head_forward(&Tensor::new(vec![h * b, e_dim], e)?, h, b, Mode::Infer)?;
        out.extend(z[(h - 1) * b..].iter().map(|&v| height_from_logit(v)));
    }
    Ok(out)
}

/// Optimization settings of one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch: usize,
    /// Frozen-encoder head training.
    pub stage1: StageConfig,
    /// End-to-end fine-tuning.
    pub stage2: StageConfig,
    /// Training windows end at every this-many-th frame.
    pub sample_stride: usize,
    /// Validation windows end at every this-many-th frame.
    pub val_stride: usize,
    /// Cap on training windows per epoch (random subset each epoch).
    pub max_windows_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 16,
            stage1: StageConfig {
                lr: 1e-3,
                max_epochs: 30,
                patience: 10,
            },
            stage2: StageConfig {
                lr: 1e-4,
                max_epochs: 5,
                patience: 10,
            },
            sample_stride: 5,
            val_stride: 10,
            max_windows_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.sample_stride == 0 || self.val_stride == 0 {
            return Err(Error::invalid("batch and strides must be positive"));
        }
        for s in [&self.stage1, &self.stage2] {
            if !(s.lr > 0.0 && s.lr.is_finite()) || s.patience == 0 {
                return Err(Error::invalid("stage learning rate and patience must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean training loss per epoch, both stages in order.
    pub train_loss: Vec<f64>,
    /// Validation RMSE(d) per epoch, both stages in order.
    pub val_rmse: Vec<f64>,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub best_val_rmse: f64,
}

fn windows_of(trajs: &[Trajectory], stride: usize) -> Vec<(usize, usize)> {
    trajs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.samples.len()).step_by(stride).map(move |f| (i, f)))
        .collect()
}

fn val_rmse(model: &mut HeightModel, val: &[Trajectory], emb: &[Vec<f64>], stride: usize) -> Result<f64> {
    let (mut se, mut n) = (0.0, 0usize);
    for (traj, e) in val.iter().zip(emb) {
        let frames: Vec<usize> = (0..traj.samples.len()).step_by(stride).collect();
        let pred = predict_from_embeddings(model, e, &frames)?;
        for (p, &f) in pred.iter().zip(&frames) {
            se += (p - traj.samples[f].height).powi(2);
            n += 1;
        }
    }
    Ok((se / n.max(1) as f64).sqrt())
}

/// Two-stage height training with early stopping on validation RMSE.
/// Stage 1 trains GRU and head on cached embeddings of the frozen encoder;
/// stage 2 fine-tunes everything end to end. The best validation state
/// of either stage is returned.
pub fn train_height(
    mut model: HeightModel,
    train: &[Trajectory],
    val: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<(HeightModel, TrainReport)> {
    cfg.validate()?;
    if train.iter().all(|t| t.samples.is_empty()) {
        return Err(Error::invalid("training split is empty"));
    }
    if val.iter().all(|t| t.samples.is_empty()) {
        return Err(Error::invalid("dataset lacks a validation split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let heights: Vec<f64> = train.iter().flat_map(|t| t.samples.iter().map(|s| s.height)).collect();
    model.set_output_height(heights.iter().sum::<f64>() / heights.len() as f64);
    model.set_input_gradient(false);

    let windows = windows_of(train, cfg.sample_stride);
    let h = model.config.window;
    let e_dim = model.config.embedding;
    let mut report = TrainReport {
        best_val_rmse: f64::INFINITY,
        ..TrainReport::default()
    };

    let epoch_windows = |rng: &mut ChaCha8Rng| {
        let mut w = windows.clone();
        w.shuffle(rng);
        if let Some(cap) = cfg.max_windows_per_epoch {
            w.truncate(cap);
        }
        w
    };
    let targets = |batch: &[(usize, usize)], cfgm: &ModelConfig| -> Vec<f64> {
        let mut t = vec![0.0; h * batch.len()];
        for (bi, &(ti, f)) in batch.iter().enumerate() {
            for (j, idx) in cfgm.window_indices(f).enumerate() {
                t[j * batch.len() + bi] = train[ti].samples[idx].height;
            }
        }
        t
    };

    // stage 1: frozen encoder
    let train_emb: Vec<Vec<f64>> = train
        .iter()
        .map(|t| encode_trajectory(&mut model, t))
        .collect::<Result<_>>()?;
    let mut val_emb: Vec<Vec<f64>> = val
        .iter()
        .map(|t| encode_trajectory(&mut model, t))
        .collect::<Result<_>>()?;
    let mut best = model.clone();
    let mut stale = 0;
    let mut adam = Adam::new(cfg.stage1.lr);
    for epoch in 0..cfg.stage1.max_epochs {
        let (mut total, mut count) = (0.0, 0);
        for batch in epoch_windows(&mut rng).chunks(cfg.batch) {
            let b = batch.len();
            let mut e = vec![0.0; h * b * e_dim];
            for (bi, &(ti, f)) in batch.iter().enumerate() {
                for (j, idx) in model.config.window_indices(f).enumerate() {
                    let dst = (j * b + bi) * e_dim;
                    e[dst..dst + e_dim].copy_from_slice(&train_emb[ti][idx * e_dim..(idx + 1) * e_dim]);
                }
            }
            let t = targets(batch, &model.config);
            model.zero_grad();
            let z = model.head_forward(&Tensor::new(vec![h * b, e_dim], e)?, h, b, Mode::Train)?;
            let (loss, dz) = height_loss(&z, &t);
            model.head_backward(&dz)?;
            adam.update(&mut model.head_params_mut())?;
            total += loss;
            count += 1;
        }
        let v = val_rmse(&mut model, val, &val_emb, cfg.val_stride)?;
        report.train_loss.push(total / count.max(1) as f64);
        report.val_rmse.push(v);
        report.stage1_epochs = epoch + 1;
        info!("stage 1 epoch {epoch}: loss {:.5} val rmse {v:.4}", total / count.max(1) as f64);
        if v < report.best_val_rmse {
            report.best_val_rmse = v;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.stage1.patience {
                break;
            }
        }
    }
    model = best.clone();

    // stage 2: end to end
    let mut adam = Adam::new(cfg.stage2.lr);
    stale = 0;
    for epoch in 0..cfg.stage2.max_epochs {
        let (mut total, mut count) = (0.0, 0);
        for batch in epoch_windows(&mut rng).chunks(cfg.batch) {
            let b = batch.len();
            let mut frames: Vec<&[f32]> = vec![&[]; h * b];
            for (bi, &(ti, f)) in batch.iter().enumerate() {
                for (j, idx) in model.config.window_indices(f).enumerate() {
                    frames[j * b + bi] = &train[ti].samples[idx].depth;
                }
            }
            let x = frames_tensor(&frames, &model.config)?;
            let t = targets(batch, &model.config);
            model.zero_grad();
            let z = model.forward(&x, h, b, Mode::Train)?;
            let (loss, dz) = height_loss(&z, &t);
            model.backward(&dz)?;
            adam.update(&mut model.params_mut())?;
            total += loss;
            count += 1;
        }
        val_emb = val
            .iter()
            .map(|t| encode_trajectory(&mut model, t))
            .collect::<Result<_>>()?;
        let v = val_rmse(&mut model, val, &val_emb, cfg.val_stride)?;
        report.train_loss.push(total / count.max(1) as f64);
        report.val_rmse.push(v);
        report.stage2_epochs = epoch + 1;
        info!("stage 2 epoch {epoch}: loss {:.5} val rmse {v:.4}", total / count.max(1) as f64);
        if v < report.best_val_rmse {
            report.best_val_rmse = v;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.stage2.patience {
                break;
            }
        }
    }
    Ok((best, report))
}

/// Decoder target of the transcoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PretrainTarget {
    /// Camera-frame surface normals (3 channels).
    Normals,
    /// The normalized input depth itself (1 channel).
    Depth,
}

impl PretrainTarget {
    pub fn channels(self) -> usize {
        match self {
            PretrainTarget::Normals => 3,
            PretrainTarget::Depth => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PretrainTarget::Normals => "normals",
            PretrainTarget::Depth => "depth",
        }
    }
}

/// One pretraining example.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainPair {
    pub depth: Vec<f32>,
    /// Channel-major `[3, R, R]` normals.
    pub normals: Vec<f64>,
}

/// Renders normals for `n` random frames of `trajs`, each paired with its
/// stored depth. `worlds` maps world seeds to geometry.
pub fn pretrain_pairs(
    trajs: &[Trajectory],
    worlds: &BTreeMap<u64, World>,
    n: usize,
    seed: u64,
) -> Result<Vec<PretrainPair>> {
    let all: Vec<(usize, usize)> = windows_of(trajs, 1);
    if all.is_empty() {
        return Err(Error::invalid("no frames to pair"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, all.len(), n.min(all.len()));
    picks
        .into_iter()
        .map(|k| {
            let (ti, f) = all[k];
            let t = &trajs[ti];
            let world = worlds
                .get(&t.meta.world_seed)
                .ok_or_else(|| Error::invalid(format!("world {} not loaded", t.meta.world_seed)))?;
            let s = &t.samples[f];
            let pose = crate::planner::camera_pose(&s.state, t.meta.camera_pitch);
            Ok(PretrainPair {
                depth: s.depth.clone(),
                normals: render_normals(world, &pose, &t.meta.camera).to_planar(),
            })
        })
        .collect()
}

/// Transcoder loss `λ‖N − N*‖² + Σ_c ‖∇N_c − ∇N*_c‖²` per image, averaged
/// over the batch. Spatial gradients are forward differences with a
/// replicated border (zero difference past the last row/column).
pub fn transcoder_loss(pred: &Tensor, target: &Tensor, lambda: f64) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let (n, c, h, w) = pred.nchw()?;
    let mut grad = vec![0.0; pred.len()];
    let mut loss = 0.0;
    let e: Vec<f64> = pred.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
    for p in 0..n * c {
        let o = p * h * w;
        for i in 0..h {
            for j in 0..w {
                let k = o + i * w + j;
                loss += lambda * e[k] * e[k];
                grad[k] += 2.0 * lambda * e[k];
                if j + 1 < w {
                    let g = e[k + 1] - e[k];
                    loss += g * g;
                    grad[k + 1] += 2.0 * g;
                    grad[k] -= 2.0 * g;
                }
                if i + 1 < h {
                    let g = e[k + w] - e[k];
                    loss += g * g;
                    grad[k + w] += 2.0 * g;
                    grad[k] -= 2.0 * g;
                }
            }
        }
    }
    let inv = 1.0 / n as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok((loss * inv, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lambda: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lr: 1e-3,
            epochs: 50,
            batch: 16,
            lambda: 1e4,
        }
    }
}

/// Encoder + decoder trained to transcode depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcoder {
    pub config: ModelConfig,
    pub target: PretrainTarget,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Full-set loss before training, in inference mode.
    pub initial_loss: f64,
    /// Full-set loss after training, in inference mode.
    pub final_loss: f64,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

impl Transcoder {
    pub fn new(config: ModelConfig, target: PretrainTarget, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = build_encoder(&config, &mut rng)?;
        let decoder = build_decoder(&config, target.channels(), &mut rng)?;
        Ok(Self {
            config,
            target,
            encoder,
            decoder,
        })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let e = self.encoder.forward(x, mode)?;
        self.decoder.forward(&e, mode)
    }

    fn batch(&self, pairs: &[&PretrainPair]) -> Result<(Tensor, Tensor)> {
        let frames: Vec<&[f32]> = pairs.iter().map(|p| p.depth.as_slice()).collect();
        let x = frames_tensor(&frames, &self.config)?;
        let r = self.config.resolution;
        let y = match self.target {
            PretrainTarget::Depth => x.clone(),
            PretrainTarget::Normals => {
                let mut data = Vec::with_capacity(pairs.len() * 3 * r * r);
                for p in pairs {
                    if p.normals.len() != 3 * r * r {
                        return Err(Error::shape("normal image does not match the resolution"));
                    }
                    data.extend_from_slice(&p.normals);
                }
                Tensor::new(vec![pairs.len(), 3, r, r], data)?
            }
        };
        Ok((x, y))
    }

    /// Mean loss over `pairs` in inference mode.
    pub fn evaluate(&mut self, pairs: &[PretrainPair], lambda: f64) -> Result<f64> {
        let mut total = 0.0;
        for chunk in pairs.chunks(64) {
            let refs: Vec<&PretrainPair> = chunk.iter().collect();
            let (x, y) = self.batch(&refs)?;
            let out = self.forward(&x, Mode::Infer)?;
            total += transcoder_loss(&out, &y, lambda)?.0 * chunk.len() as f64;
        }
        Ok(total / pairs.len() as f64)
    }

    pub fn to_checkpoint(&self, seed: u64, step: u64) -> Checkpoint {
        let mut cfg = self.config.to_kv();
        cfg.push(("kind".into(), "transcoder".into()));
        cfg.push(("target".into(), self.target.name().into()));
        let params = self.encoder.params().into_iter().chain(self.decoder.params());
        Checkpoint::from_params(seed, step, cfg, params)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.config_value("kind") != Some("transcoder") {
            return Err(Error::format("checkpoint", "not a transcoder"));
        }
        let target = match c.config_value("target") {
            Some("normals") => PretrainTarget::Normals,
            Some("depth") => PretrainTarget::Depth,
            other => return Err(Error::format("checkpoint", format!("bad target {other:?}"))),
        };
        let mut t = Self::new(ModelConfig::from_checkpoint(c)?, target, c.seed)?;
        let mut params = t.encoder.params_mut();
        params.extend(t.decoder.params_mut());
        c.load_into(&mut params)?;
        Ok(t)
    }
}

/// Trains a transcoder with Adam on `pairs`.
pub fn pretrain_transcoder(
    pairs: &[PretrainPair],
    model: ModelConfig,
    target: PretrainTarget,
    cfg: &PretrainConfig,
) -> Result<(Transcoder, PretrainReport)> {
    if pairs.is_empty() {
        return Err(Error::invalid("pretraining set is empty"));
    }
    if cfg.batch < 2 {
        return Err(Error::invalid("batch normalization needs batches of at least 2"));
    }
    let mut tc = Transcoder::new(model, target, cfg.seed)?;
    if let Some(Layer::Conv(c)) = tc.encoder.layers.first_mut() {
        c.propagate = false;
    }
    let initial_loss = tc.evaluate(pairs, cfg.lambda)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::dataset::mix(cfg.seed, 1));
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0);
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&PretrainPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let (x, y) = tc.batch(&refs)?;
            tc.encoder.params_mut().into_iter().for_each(Param::zero_grad);
            tc.decoder.params_mut().into_iter().for_each(Param::zero_grad);
            let out = tc.forward(&x, Mode::Train)?;
            let (loss, g) = transcoder_loss(&out, &y, cfg.lambda)?;
            let de = tc.decoder.backward(&g)?;
            tc.encoder.backward(&de)?;
            let mut params = tc.encoder.params_mut();
            params.extend(tc.decoder.params_mut());
            adam.update(&mut params)?;
            total += loss;
            count += 1;
        }
        let mean = total / count.max(1) as f64;
        info!("pretrain epoch {epoch}: loss {mean:.4}");
        epoch_loss.push(mean);
    }
    let final_loss = tc.evaluate(pairs, cfg.lambda)?;
    Ok((
        tc,
        PretrainReport {
            initial_loss,
            final_loss,
            epoch_loss,
        },
    ))
}

/// One metrics row; `world_seed` is `None` for the split total.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub split: Split,
    pub world_seed: Option<u64>,
    pub n_samples: usize,
    pub rmse_d: f64,
    pub rmse_fa: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Per-world rows by ascending seed, then the split total.
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str = "split,world_seed,n_samples,rmse_d,rmse_fa";

impl Metrics {
    pub fn total(&self) -> &MetricsRow {
        self.rows.last().expect("metrics always hold a total row")
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            let seed = r.world_seed.map_or_else(|| "all".to_string(), |v| v.to_string());
            s += &format!("{},{seed},{},{:?},{:?}\n", r.split, r.n_samples, r.rmse_d, r.rmse_fa);
        }
        s
    }
}

/// Predicted ground-effect force from a height estimate; the height is
/// clamped above the law's singularity first.
pub fn predicted_force(ige: &IdentifiedGroundEffect, cmd: &crate::dynamics::RotorCommand, d_hat: f64) -> f64 {
    let floor = (ige.beta.max(0.0) + 2.0 * ige.eps).sqrt();
    cheeseman_identified(ige, cmd, d_hat.max(floor))
}

/// Metrics for given per-frame height predictions.
pub fn metrics_from_predictions(
    trajs: &[Trajectory],
    predictions: &[Vec<f64>],
    split: Split,
    ige: &IdentifiedGroundEffect,
) -> Result<Metrics> {
    if trajs.len() != predictions.len() {
        return Err(Error::invalid("one prediction vector per trajectory required"));
    }
    // (Σ e_d², Σ e_f², n) per world, reduced in trajectory order
    let mut per_world: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    let mut all = (0.0, 0.0, 0usize);
    for (t, pred) in trajs.iter().zip(predictions) {
        if pred.len() != t.samples.len() {
            return Err(Error::invalid("prediction count differs from sample count"));
        }
        let (mut sd, mut sf) = (0.0, 0.0);
        for (s, &d_hat) in t.samples.iter().zip(pred) {
            sd += (d_hat - s.height).powi(2);
            sf += (predicted_force(ige, &s.rotors, d_hat) - s.fa).powi(2);
        }
        let w = per_world.entry(t.meta.world_seed).or_default();
        w.0 += sd;
        w.1 += sf;
        w.2 += t.samples.len();
        all.0 += sd;
        all.1 += sf;
        all.2 += t.samples.len();
    }
    let row = |seed: Option<u64>, (sd, sf, n): (f64, f64, usize)| MetricsRow {
        split,
        world_seed: seed,
        n_samples: n,
        rmse_d: (sd / n.max(1) as f64).sqrt(),
        rmse_fa: (sf / n.max(1) as f64).sqrt(),
    };
    let mut rows: Vec<MetricsRow> = per_world.into_iter().map(|(s, v)| row(Some(s), v)).collect();
    rows.push(row(None, all));
    Ok(Metrics { rows })
}

/// Evaluates `model` on every frame of `trajs`, in parallel across
/// trajectories.
pub fn evaluate(
    model: &HeightModel,
    trajs: &[Trajectory],
    split: Split,
    ige: &IdentifiedGroundEffect,
) -> Result<Metrics> {
    let preds: Vec<Vec<f64>> = trajs
        .par_iter()
        .map(|t| predict_trajectory(&mut model.clone(), t))
        .collect::<Result<_>>()?;
    metrics_from_predictions(trajs, &preds, split, ige)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;

    fn tiny() -> ModelConfig {
        ModelConfig {
            resolution: 8,
            channels: vec![3, 2],
            first_kernel: 7,
            kernel: 3,
            mlp_hidden: 6,
            embedding: 5,
            gru_hidden: 4,
            gru_layers: 2,
            head_hidden: 3,
            window: 3,
            frame_stride: 2,
            max_depth: 10.0,
        }
    }

    fn random_frames(n: usize, px: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..px).map(|_| rng.random_range(0.5f32..8.0)).collect()).collect()
    }

    #[test]
    fn default_encoder_reaches_one_pixel() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.encoder_sizes(), vec![64, 32, 16, 8, 4, 2, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dec = build_decoder(&cfg, 3, &mut rng).unwrap();
        let mut enc = build_encoder(&cfg, &mut rng).unwrap();
        let x = Tensor::new(vec![2, 1, 64, 64], vec![0.3; 2 * 64 * 64]).unwrap();
        let e = enc.forward(&x, Mode::Train).unwrap();
        assert_eq!(e.shape(), &[2, 50]);
        let out = dec.clone().forward(&e, Mode::Train).unwrap();
        assert_eq!(out.shape(), &[2, 3, 64, 64]);
    }

    #[test]
    fn encode_is_deterministic_and_sensitive() {
        let mut m = HeightModel::new(tiny(), 3).unwrap();
        let f = random_frames(1, 64, 1);
        let mut g = f.clone();
        g[0][10] += 0.5;
        let a = m.embed(&frames_tensor(&[&f[0]], &m.config).unwrap(), Mode::Infer).unwrap();
        let b = HeightModel::new(tiny(), 3)
            .unwrap()
            .embed(&frames_tensor(&[&f[0]], &tiny()).unwrap(), Mode::Infer)
            .unwrap();
        let c = m.embed(&frames_tensor(&[&g[0]], &m.config).unwrap(), Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(frames_tensor(&[&f[0][..10]], &m.config).is_err());
    }

    #[test]
    fn untrained_output_is_positive() {
        let mut m = HeightModel::new(tiny(), 5).unwrap();
        let f = random_frames(3, 64, 2);
        let refs: Vec<&[f32]> = f.iter().map(|v| v.as_slice()).collect();
        let d = predict_height(&mut m, &refs).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(predict_height(&mut m, &[]).is_err());
        assert!(height_from_logit(-1e4) > 0.0);
    }

    #[test]
    fn embedding_input_gradient() {
        let mut m = HeightModel::new(tiny(), 7).unwrap();
        m.set_input_gradient(true);
        let f = random_frames(4, 64, 3);
        let refs: Vec<&[f32]> = f.iter().map(|v| v.as_slice()).collect();
        let x = frames_tensor(&refs, &m.config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<f64> = (0..4 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.embed(&x, Mode::Frozen).unwrap();
        let dx = m.encoder.backward(&Tensor::new(vec![4, 5], r.clone()).unwrap()).unwrap();
        let rep = grad_check("frames", x.data(), dx.data(), 1e-6, |v| {
            let t = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
            m.clone().embed(&t, Mode::Frozen).unwrap().data().iter().zip(&r).map(|(a, b)| a * b).sum()
        });
        assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
    }

    #[test]
    fn end_to_end_gradient() {
        let cfg = tiny();
        let mut m = HeightModel::new(cfg.clone(), 11).unwrap();
        m.set_input_gradient(true);
        let (steps, batch) = (cfg.window, 2);
        let f = random_frames(steps * batch, 64, 4);
        let refs: Vec<&[f32]> = f.iter().map(|v| v.as_slice()).collect();
        let x = frames_tensor(&refs, &cfg).unwrap();
        let target: Vec<f64> = (0..steps * batch).map(|i| 0.5 + 0.1 * i as f64).collect();
        let loss_of = |m: &mut HeightModel, x: &Tensor| {
            let z = m.forward(x, steps, batch, Mode::Train).unwrap();
            height_loss(&z, &target).0
        };
        let mut a = m.clone();
        a.zero_grad();
        let z = a.forward(&x, steps, batch, Mode::Train).unwrap();
        let (_, dz) = height_loss(&z, &target);
        let dx = a.backward(&dz).unwrap();
        let rep = grad_check("frames", x.data(), dx.data(), 1e-6, |v| {
            loss_of(&mut m.clone(), &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap())
        });
        assert!(rep.max_rel_error <= 1e-5, "input {rep:?}");
        let analytic: Vec<(bool, Vec<f64>, Vec<f64>)> =
            a.params().iter().map(|p| (p.trainable, p.value.clone(), p.grad.clone())).collect();
        for (k, (trainable, value, grad)) in analytic.iter().enumerate() {
            if !trainable {
                continue;
            }
            let loss_at = |v: &[f64]| {
                let mut c = m.clone();
                c.params_mut()[k].value.copy_from_slice(v);
                loss_of(&mut c, &x)
            };
            let name = &a.params()[k].name;
            if grad.iter().all(|g| g.abs() < 1e-12) {
                // convolution biases ahead of batch norm cancel exactly
                let mut v = value.clone();
                let base = loss_at(&v);
                v[0] += 1e-3;
                assert!((loss_at(&v) - base).abs() < 1e-10, "param {name} should not affect the loss");
                continue;
            }
            let rep = grad_check("param", value, grad, 1e-6, loss_at);
            assert!(rep.max_rel_error <= 1e-5, "param {name}: {rep:?}");
        }
    }

    /// Straightforward per-pixel evaluation with explicit replicate padding.
    fn reference_loss(pred: &[f64], target: &[f64], n: usize, c: usize, h: usize, w: usize, lambda: f64) -> f64 {
        let at = |v: &[f64], b: usize, ch: usize, i: usize, j: usize| {
            v[((b * c + ch) * h + i.min(h - 1)) * w + j.min(w - 1)]
        };
        let mut total = 0.0;
        for b in 0..n {
            let mut l = 0.0;
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let d = at(pred, b, ch, i, j) - at(target, b, ch, i, j);
                        l += lambda * d * d;
                        let gx = (at(pred, b, ch, i, j + 1) - at(pred, b, ch, i, j))
                            - (at(target, b, ch, i, j + 1) - at(target, b, ch, i, j));
                        let gy = (at(pred, b, ch, i + 1, j) - at(pred, b, ch, i, j))
                            - (at(target, b, ch, i + 1, j) - at(target, b, ch, i, j));
                        l += gx * gx + gy * gy;
                    }
                }
            }
            total += l;
        }
        total / n as f64
    }

    #[test]
    fn transcoder_loss_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = [2usize, 3, 5, 4];
        let n: usize = shape.iter().product();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pt = Tensor::new(shape.to_vec(), p.clone()).unwrap();
        let tt = Tensor::new(shape.to_vec(), t.clone()).unwrap();
        let (l, g) = transcoder_loss(&pt, &tt, 1e4).unwrap();
        let r = reference_loss(&p, &t, 2, 3, 5, 4, 1e4);
        assert!((l - r).abs() <= 1e-10 * r.abs().max(1.0), "{l} vs {r}");
        assert_eq!(transcoder_loss(&tt, &tt, 1e4).unwrap().0, 0.0);
        let rep = grad_check("pred", &p, g.data(), 1e-6, |v| reference_loss(v, &t, 2, 3, 5, 4, 1e4));
        assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
    }

    #[test]
    fn window_indices_clamp_at_start() {
        let cfg = ModelConfig {
            window: 4,
            frame_stride: 3,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.window_indices(10).collect::<Vec<_>>(), vec![1, 4, 7, 10]);
        assert_eq!(cfg.window_indices(4).collect::<Vec<_>>(), vec![0, 0, 1, 4]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = HeightModel::new(tiny(), 21).unwrap();
        let c = m.to_checkpoint(21, 5);
        let back = HeightModel::from_checkpoint(&Checkpoint::from_bytes(&c.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.params(), m.params());
        let t = Transcoder::new(tiny(), PretrainTarget::Depth, 2).unwrap();
        let back = Transcoder::from_checkpoint(&t.to_checkpoint(2, 0)).unwrap();
        assert_eq!(back.encoder.params(), t.encoder.params());
        assert!(HeightModel::from_checkpoint(&t.to_checkpoint(2, 0)).is_err());
    }
}
