use rand::Rng;

use super::{gemm, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// 2-D convolution with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in, k, k]`.
    pub weight: Param,
    pub bias: Param,
    /// When false, backward skips the input gradient (first layer).
    pub propagate: bool,
    cols: Vec<Vec<f64>>,
    in_shape: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::uniform(format!("{name}.weight"), out_channels * fan_in, bound, rng),
            bias: Param::new(format!("{name}.bias"), vec![0.0; out_channels]),
            propagate: true,
            cols: Vec::new(),
            in_shape: (0, 0, 0, 0),
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::shape(format!("input {h}x{w} smaller than kernel {k}")));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn im2col(&self, x: &[f64], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let n_out = ho * wo;
        for c in 0..self.in_channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * n_out;
                    for oi in 0..ho {
                        let ii = (oi * s + ki) as isize - p;
                        let dst = &mut cols[row + oi * wo..row + (oi + 1) * wo];
                        if ii < 0 || ii >= h as isize {
                            dst.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &x[(c * h + ii as usize) * w..(c * h + ii as usize + 1) * w];
                        for (oj, d) in dst.iter_mut().enumerate() {
                            let jj = (oj * s + kj) as isize - p;
                            *d = if jj < 0 || jj >= w as isize { 0.0 } else { src[jj as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [f64]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let n_out = ho * wo;
        for c in 0..self.in_channels {
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * n_out;
                    for oi in 0..ho {
                        let ii = (oi * s + ki) as isize - p;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        for oj in 0..wo {
                            let jj = (oj * s + kj) as isize - p;
                            if jj >= 0 && jj < w as isize {
                                dx[(c * h + ii as usize) * w + jj as usize] += cols[row + oi * wo + oj];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.nchw()?;
        if c != self.in_channels {
            return Err(Error::shape(format!("conv expects {} channels, got {c}", self.in_channels)));
        }
        let (ho, wo) = self.output_size(h, w)?;
        let kk = c * self.kernel * self.kernel;
        let p = ho * wo;
        let mut out = vec![0.0; n * self.out_channels * p];
        self.cols.clear();
        let mut cols = vec![0.0; kk * p];
        for b in 0..n {
            self.im2col(&x.data()[b * c * h * w..(b + 1) * c * h * w], h, w, ho, wo, &mut cols);
            let y = &mut out[b * self.out_channels * p..(b + 1) * self.out_channels * p];
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            gemm(self.out_channels, kk, p, &self.weight.value, false, &cols, false, y, true);
            if mode.caches() {
                self.cols.push(cols.clone());
            }
        }
        self.in_shape = (n, c, h, w);
        let t = Tensor::new(vec![n, self.out_channels, ho, wo], out)?;
        t.debug_check();
        Ok(t)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = self.in_shape;
        let (ho, wo) = self.output_size(h, w)?;
        let p = ho * wo;
        if dy.shape() != [n, self.out_channels, ho, wo] || self.cols.len() != n {
            return Err(Error::shape("conv backward without matching forward"));
        }
        let kk = c * self.kernel * self.kernel;
        let mut dx = vec![0.0; n * c * h * w];
        let mut dcols = vec![0.0; kk * p];
        for b in 0..n {
            let g = &dy.data()[b * self.out_channels * p..(b + 1) * self.out_channels * p];
            for (o, row) in g.chunks(p).enumerate() {
                self.bias.grad[o] += row.iter().sum::<f64>();
            }
            gemm(self.out_channels, p, kk, g, false, &self.cols[b], true, &mut self.weight.grad, true);
            if self.propagate {
                gemm(kk, self.out_channels, p, &self.weight.value, true, g, false, &mut dcols, false);
                self.col2im(&dcols, h, w, ho, wo, &mut dx[b * c * h * w..(b + 1) * c * h * w]);
            }
        }
        Tensor::new(vec![n, c, h, w], dx)
    }
}

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
    shape: Vec<usize>,
    batch_stats: bool,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.running_mean"), vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.running_var"), vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            x_hat: Vec::new(),
            inv_std: Vec::new(),
            shape: Vec::new(),
            batch_stats: false,
        }
    }

    /// Sets the running statistics to the biased batch statistics of `x`,
    /// the ones training mode normalizes with.
    pub fn set_statistics(&mut self, x: &Tensor) -> Result<()> {
        let (n, c, h, w) = x.nchw()?;
        if c != self.channels {
            return Err(Error::shape(format!("batchnorm expects {} channels, got {c}", self.channels)));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        for ch in 0..c {
            let vals = || (0..n).flat_map(move |b| x.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter());
            let mean = vals().sum::<f64>() / m;
            self.running_mean.value[ch] = mean;
            self.running_var.value[ch] = vals().map(|a| (a - mean) * (a - mean)).sum::<f64>() / m;
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, c, h, w) = x.nchw()?;
        if c != self.channels {
            return Err(Error::shape(format!("batchnorm expects {} channels, got {c}", self.channels)));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let train = mode == Mode::Train;
        if train && n * hw < 2 {
            return Err(Error::shape("batch statistics need at least two values per channel"));
        }
        let mut out = vec![0.0; x.len()];
        let mut x_hat = vec![0.0; if mode.caches() { x.len() } else { 0 }];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let idx = |b: usize, i: usize| (b * c + ch) * hw + i;
            let (mean, var) = if train {
                let mut s = 0.0;
                for b in 0..n {
                    s += x.data()[idx(b, 0)..idx(b, 0) + hw].iter().sum::<f64>();
                }
                let mean = s / m;
                let mut v = 0.0;
                for b in 0..n {
                    v += x.data()[idx(b, 0)..idx(b, 0) + hw]
                        .iter()
                        .map(|a| (a - mean) * (a - mean))
                        .sum::<f64>();
                }
                let var = v / m;
                let mo = self.momentum;
                self.running_mean.value[ch] = (1.0 - mo) * self.running_mean.value[ch] + mo * mean;
                self.running_var.value[ch] = (1.0 - mo) * self.running_var.value[ch] + mo * var * m / (m - 1.0);
                (mean, var)
            } else {
                (self.running_mean.value[ch], self.running_var.value[ch])
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                for i in 0..hw {
                    let k = idx(b, i);
                    let xh = (x.data()[k] - mean) * is;
                    if mode.caches() {
                        x_hat[k] = xh;
                    }
                    out[k] = g * xh + bt;
                }
            }
        }
        self.x_hat = x_hat;
        self.inv_std = inv_std;
        self.shape = x.shape().to_vec();
        self.batch_stats = train;
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        if dy.shape() != self.shape.as_slice() || self.x_hat.len() != dy.len() {
            return Err(Error::shape("batchnorm backward without matching forward"));
        }
        let (n, c, h, w) = dy.nchw()?;
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            let idx = |b: usize, i: usize| (b * c + ch) * hw + i;
            let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
            for b in 0..n {
                for i in 0..hw {
                    let k = idx(b, i);
                    sum_dy += dy.data()[k];
                    sum_dy_xh += dy.data()[k] * self.x_hat[k];
                }
            }
            self.gamma.grad[ch] += sum_dy_xh;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * self.inv_std[ch];
            for b in 0..n {
                for i in 0..hw {
                    let k = idx(b, i);
                    dx[k] = if self.batch_stats {
                        scale / m * (m * dy.data()[k] - sum_dy - self.x_hat[k] * sum_dy_xh)
                    } else {
                        scale * dy.data()[k]
                    };
                }
            }
        }
        Tensor::new(dy.shape().to_vec(), dx)
    }
}

/// Fully connected layer on `[N, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]`.
    pub weight: Param,
    pub bias: Param,
    x: Vec<f64>,
    n: usize,
}

impl Linear {
    pub fn new(name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: Param::uniform(format!("{name}.weight"), inputs * outputs, bound, rng),
            bias: Param::new(format!("{name}.bias"), vec![0.0; outputs]),
            x: Vec::new(),
            n: 0,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = x.shape()[0];
        if x.len() != n * self.inputs {
            return Err(Error::shape(format!(
                "linear expects {} features, got shape {:?}",
                self.inputs,
                x.shape()
            )));
        }
        let mut out: Vec<f64> = (0..n).flat_map(|_| self.bias.value.iter().copied()).collect();
        gemm(n, self.inputs, self.outputs, x.data(), false, &self.weight.value, true, &mut out, true);
        if mode.caches() {
            self.x = x.data().to_vec();
        }
        self.n = n;
        Tensor::new(vec![n, self.outputs], out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let n = self.n;
        if dy.len() != n * self.outputs || self.x.len() != n * self.inputs {
            return Err(Error::shape("linear backward without matching forward"));
        }
        for row in dy.data().chunks(self.outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        gemm(self.outputs, n, self.inputs, dy.data(), true, &self.x, false, &mut self.weight.grad, true);
        let mut dx = vec![0.0; n * self.inputs];
        gemm(n, self.outputs, self.inputs, dy.data(), false, &self.weight.value, false, &mut dx, false);
        Tensor::new(vec![n, self.inputs], dx)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Relu {
    mask: Vec<bool>,
    shape: Vec<usize>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode.caches() {
            self.mask = x.data().iter().map(|&v| v > 0.0).collect();
        }
        self.shape = x.shape().to_vec();
        Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        if dy.len() != self.mask.len() {
            return Err(Error::shape("relu backward without matching forward"));
        }
        let dx = dy
            .data()
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::new(dy.shape().to_vec(), dx)
    }
}

/// Nearest-neighbour ×2 upsampling.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Upsample2x {
    in_shape: Vec<usize>,
}

impl Upsample2x {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.nchw()?;
        let mut out = vec![0.0; n * c * 4 * h * w];
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        self.in_shape = vec![n, c, h, w];
        Tensor::new(vec![n, c, 2 * h, 2 * w], out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = *self.in_shape.as_slice() else {
            return Err(Error::shape("upsample backward without forward"));
        };
        if dy.shape() != [n, c, 2 * h, 2 * w] {
            return Err(Error::shape("upsample gradient shape mismatch"));
        }
        let mut dx = vec![0.0; n * c * h * w];
        for p in 0..n * c {
            let src = &dy.data()[p * 4 * h * w..(p + 1) * 4 * h * w];
            let dst = &mut dx[p * h * w..(p + 1) * h * w];
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
                }
            }
        }
        Tensor::new(self.in_shape.clone(), dx)
    }
}

/// Reshapes the non-batch axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Reshape {
    pub to: Vec<usize>,
    from: Vec<usize>,
}

impl Reshape {
    pub fn new(to: Vec<usize>) -> Self {
        Self { to, from: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.from = x.shape().to_vec();
        let mut shape = vec![x.shape()[0]];
        shape.extend(&self.to);
        x.clone().reshape(&shape)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        dy.clone().reshape(&self.from)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm),
    Linear(Linear),
    Relu(Relu),
    Upsample(Upsample2x),
    Reshape(Reshape),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(x, mode),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Linear(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x, mode),
            Layer::Upsample(l) => l.forward(x),
            Layer::Reshape(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::Linear(l) => l.backward(dy),
            Layer::Relu(l) => l.backward(dy),
            Layer::Upsample(l) => l.backward(dy),
            Layer::Reshape(l) => l.backward(dy),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => vec![&l.gamma, &l.beta, &l.running_mean, &l.running_var],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => vec![&mut l.gamma, &mut l.beta, &mut l.running_mean, &mut l.running_var],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new("c", 3, 3, 1, 1, 0, &mut rng);
        conv.weight.value = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = random(&[2, 3, 5, 4], 1);
        assert_eq!(conv.forward(&x, Mode::Infer).unwrap(), x);
    }

    #[test]
    fn conv_output_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv2d::new("c", 1, 1, 7, 2, 3, &mut rng);
        assert_eq!(conv.output_size(64, 64).unwrap(), (32, 32));
        let conv = Conv2d::new("c", 1, 1, 3, 2, 1, &mut rng);
        assert_eq!(conv.output_size(2, 2).unwrap(), (1, 1));
    }

    #[test]
    fn relu_on_negative_input() {
        let mut r = Relu::default();
        let x = Tensor::new(vec![2, 3], vec![-1.0, -2.0, -0.5, -3.0, -1e-9, -7.0]).unwrap();
        let y = r.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let g = r.backward(&Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (2, 1, 0)] {
            let mut conv = Layer::Conv(Conv2d::new("c", 3, 4, k, s, p, &mut rng));
            let rep = check_layer(&mut conv, &random(&[2, 3, 5, 5], 4), Mode::Train, 1e-5, 9).unwrap();
            assert!(rep.max_rel_error <= 1e-6, "k{k} s{s} p{p}: {rep:?}");
        }
    }

    #[test]
    fn linear_relu_upsample_reshape_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = Layer::Linear(Linear::new("l", 6, 4, &mut rng));
        assert!(check_layer(&mut lin, &random(&[3, 6], 6), Mode::Train, 1e-5, 1).unwrap().max_rel_error <= 1e-6);
        let mut relu = Layer::Relu(Relu::default());
        assert!(check_layer(&mut relu, &random(&[3, 6], 7), Mode::Train, 1e-6, 1).unwrap().max_rel_error <= 1e-6);
        let mut up = Layer::Upsample(Upsample2x::default());
        let rep = check_layer(&mut up, &random(&[2, 2, 3, 3], 8), Mode::Train, 1e-5, 1).unwrap();
        assert!(rep.max_rel_error <= 1e-6);
        let mut rs = Layer::Reshape(Reshape::new(vec![2, 2, 2]));
        let rep = check_layer(&mut rs, &random(&[3, 8], 9), Mode::Train, 1e-5, 1).unwrap();
        assert!(rep.max_rel_error <= 1e-8, "{rep:?}");
    }

    #[test]
    fn batchnorm_gradients_both_modes() {
        let mut bn = BatchNorm::new("bn", 3);
        bn.gamma.value = vec![0.5, 1.5, -1.0];
        bn.beta.value = vec![0.1, -0.2, 0.3];
        let mut layer = Layer::BatchNorm(bn);
        let x = random(&[4, 3, 3, 2], 10);
        let rep = check_layer(&mut layer, &x, Mode::Train, 1e-5, 2).unwrap();
        assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
        let rep = check_layer(&mut layer, &x, Mode::Frozen, 1e-5, 2).unwrap();
        assert!(rep.max_rel_error <= 1e-6, "{rep:?}");
    }

    #[test]
    fn batchnorm_eval_is_affine() {
        let mut bn = BatchNorm::new("bn", 2);
        bn.forward(&random(&[8, 2, 3, 3], 1), Mode::Train).unwrap();
        let a = random(&[1, 2, 3, 3], 2);
        let b = random(&[1, 2, 3, 3], 3);
        let t = 0.3;
        let mix = Tensor::new(
            vec![1, 2, 3, 3],
            a.data().iter().zip(b.data()).map(|(x, y)| t * x + (1.0 - t) * y).collect(),
        )
        .unwrap();
        let (fa, fb, fm) = (
            bn.forward(&a, Mode::Infer).unwrap(),
            bn.forward(&b, Mode::Infer).unwrap(),
            bn.forward(&mix, Mode::Infer).unwrap(),
        );
        for i in 0..fm.len() {
            assert!((fm.data()[i] - (t * fa.data()[i] + (1.0 - t) * fb.data()[i])).abs() < 1e-12);
        }
        assert!(bn.running_var.value.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new("c", 2, 2, 3, 1, 1, &mut rng);
        assert!(matches!(conv.forward(&random(&[1, 3, 4, 4], 0), Mode::Train), Err(Error::Shape(_))));
        let mut lin = Linear::new("l", 4, 2, &mut rng);
        assert!(lin.forward(&random(&[2, 5], 0), Mode::Train).is_err());
    }
}
