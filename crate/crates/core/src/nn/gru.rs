use rand::Rng;

use super::{gemm, sigmoid, Mode, Param, Tensor};
use crate::error::{Error, Result};

/// One GRU layer. Gate blocks are stacked in the order reset, update,
/// candidate:
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub inputs: usize,
    pub hidden: usize,
    /// `[3h, in]`.
    pub w_ih: Param,
    /// `[3h, h]`.
    pub w_hh: Param,
    pub b_ih: Param,
    pub b_hh: Param,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct StepCache {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
}

impl GruCell {
    pub fn new(name: &str, inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            inputs,
            hidden,
            w_ih: Param::uniform(format!("{name}.w_ih"), 3 * hidden * inputs, bound, rng),
            w_hh: Param::uniform(format!("{name}.w_hh"), 3 * hidden * hidden, bound, rng),
            b_ih: Param::uniform(format!("{name}.b_ih"), 3 * hidden, bound, rng),
            b_hh: Param::uniform(format!("{name}.b_hh"), 3 * hidden, bound, rng),
        }
    }

    fn gates(&self, x: &[f64], h: &[f64], batch: usize) -> StepCache {
        let hd = self.hidden;
        let mut gi: Vec<f64> = (0..batch).flat_map(|_| self.b_ih.value.iter().copied()).collect();
        let mut gh: Vec<f64> = (0..batch).flat_map(|_| self.b_hh.value.iter().copied()).collect();
        gemm(batch, self.inputs, 3 * hd, x, false, &self.w_ih.value, true, &mut gi, true);
        gemm(batch, hd, 3 * hd, h, false, &self.w_hh.value, true, &mut gh, true);
        let mut c = StepCache {
            x: x.to_vec(),
            h: h.to_vec(),
            r: vec![0.0; batch * hd],
            z: vec![0.0; batch * hd],
            n: vec![0.0; batch * hd],
            gh_n: vec![0.0; batch * hd],
        };
        for b in 0..batch {
            for j in 0..hd {
                let (o, k) = (b * 3 * hd, b * hd + j);
                let r = sigmoid(gi[o + j] + gh[o + j]);
                let z = sigmoid(gi[o + hd + j] + gh[o + hd + j]);
                let ghn = gh[o + 2 * hd + j];
                c.r[k] = r;
                c.z[k] = z;
                c.gh_n[k] = ghn;
                c.n[k] = (gi[o + 2 * hd + j] + r * ghn).tanh();
            }
        }
        c
    }

    /// One step for a batch: `x` is `[B, in]`, `h` is `[B, hidden]`.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let batch = h.len() / self.hidden.max(1);
        if h.len() != batch * self.hidden || x.len() != batch * self.inputs {
            return Err(Error::shape(format!(
                "gru step expects [B, {}] input and [B, {}] state",
                self.inputs, self.hidden
            )));
        }
        let c = self.gates(x, h, batch);
        Ok(next_hidden(&c))
    }

    fn params(&self) -> [&Param; 4] {
        [&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }

    /// Backward through one step; returns `(dx, dh_prev)`.
    fn backward_step(&mut self, c: &StepCache, dh_next: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let mut d_gi = vec![0.0; batch * 3 * hd];
        let mut d_gh = vec![0.0; batch * 3 * hd];
        let mut dh = vec![0.0; batch * hd];
        for b in 0..batch {
            for j in 0..hd {
                let k = b * hd + j;
                let o = b * 3 * hd;
                let g = dh_next[k];
                let (r, z, n) = (c.r[k], c.z[k], c.n[k]);
                let dz = g * (n - c.h[k]);
                let dn_pre = g * z * (1.0 - n * n);
                let dr_pre = dn_pre * c.gh_n[k] * r * (1.0 - r);
                let dz_pre = dz * z * (1.0 - z);
                dh[k] = g * (1.0 - z);
                d_gi[o + j] = dr_pre;
                d_gi[o + hd + j] = dz_pre;
                d_gi[o + 2 * hd + j] = dn_pre;
                d_gh[o + j] = dr_pre;
                d_gh[o + hd + j] = dz_pre;
                d_gh[o + 2 * hd + j] = dn_pre * r;
            }
        }
        for row in d_gi.chunks(3 * hd) {
            self.b_ih.grad.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        for row in d_gh.chunks(3 * hd) {
            self.b_hh.grad.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        gemm(3 * hd, batch, self.inputs, &d_gi, true, &c.x, false, &mut self.w_ih.grad, true);
        gemm(3 * hd, batch, hd, &d_gh, true, &c.h, false, &mut self.w_hh.grad, true);
        let mut dx = vec![0.0; batch * self.inputs];
        gemm(batch, 3 * hd, self.inputs, &d_gi, false, &self.w_ih.value, false, &mut dx, false);
        gemm(batch, 3 * hd, hd, &d_gh, false, &self.w_hh.value, false, &mut dh, true);
        (dx, dh)
    }
}

fn next_hidden(c: &StepCache) -> Vec<f64> {
    (0..c.h.len())
        .map(|k| (1.0 - c.z[k]) * c.h[k] + c.z[k] * c.n[k])
        .collect()
}

/// Stacked GRU run over whole sequences from a zero initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub cells: Vec<GruCell>,
    caches: Vec<Vec<StepCache>>,
    dims: (usize, usize),
}

impl Gru {
    pub fn new(name: &str, inputs: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let cells = (0..layers)
            .map(|l| GruCell::new(&format!("{name}.l{l}"), if l == 0 { inputs } else { hidden }, hidden, rng))
            .collect();
        Self {
            cells,
            caches: Vec::new(),
            dims: (0, 0),
        }
    }

    pub fn hidden(&self) -> usize {
        self.cells[0].hidden
    }

    /// `x` is `[T, B, in]`; returns the top layer's states `[T, B, hidden]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [t_len, batch, inp] = *x.shape() else {
            return Err(Error::shape(format!("gru expects [T, B, in], got {:?}", x.shape())));
        };
        if inp != self.cells[0].inputs || t_len == 0 {
            return Err(Error::shape(format!(
                "gru expects {} input features over a non-empty sequence",
                self.cells[0].inputs
            )));
        }
        let hd = self.hidden();
        let mut seq: Vec<Vec<f64>> = x.data().chunks(batch * inp).map(<[f64]>::to_vec).collect();
        self.caches.clear();
        for cell in &self.cells {
            let mut h = vec![0.0; batch * hd];
            let mut caches = Vec::with_capacity(t_len);
            for xt in seq.iter_mut() {
                let c = cell.gates(xt, &h, batch);
                h = next_hidden(&c);
                *xt = h.clone();
                if mode.caches() {
                    caches.push(c);
                }
            }
            self.caches.push(caches);
        }
        self.dims = (t_len, batch);
        let t = Tensor::new(vec![t_len, batch, hd], seq.concat())?;
        t.debug_check();
        Ok(t)
    }

    /// Backpropagation through time; `dy` is `[T, B, hidden]`.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (t_len, batch) = self.dims;
        let hd = self.hidden();
        if dy.shape() != [t_len, batch, hd] || self.caches.iter().any(|c| c.len() != t_len) {
            return Err(Error::shape("gru backward without matching forward"));
        }
        let mut grads: Vec<Vec<f64>> = dy.data().chunks(batch * hd).map(<[f64]>::to_vec).collect();
        let caches = std::mem::take(&mut self.caches);
        for (cell, cache) in self.cells.iter_mut().zip(&caches).rev() {
            let mut carry = vec![0.0; batch * hd];
            let mut below = vec![Vec::new(); t_len];
            for t in (0..t_len).rev() {
                let g: Vec<f64> = grads[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
                let (dx, dh) = cell.backward_step(&cache[t], &g, batch);
                below[t] = dx;
                carry = dh;
            }
            grads = below;
        }
        self.caches = caches;
        let inp = self.cells[0].inputs;
        Tensor::new(vec![t_len, batch, inp], grads.concat())
    }

    pub fn params(&self) -> Vec<&Param> {
        self.cells.iter().flat_map(|c| c.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.cells.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}
