use super::Param;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Updates every trainable parameter from its accumulated gradient.
    /// Moments are allocated on the first call; later calls must pass the
    /// same parameter list.
    pub fn update(&mut self, params: &mut [&mut Param]) -> Result<()> {
        let trainable: Vec<&mut &mut Param> = params.iter_mut().filter(|p| p.trainable).collect();
        if self.m.is_empty() {
            self.m = trainable.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if trainable.len() != self.m.len() || trainable.iter().zip(&self.m).any(|(p, m)| p.value.len() != m.len()) {
            return Err(Error::shape("optimizer state does not match the parameter list"));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (p, (m, v)) in trainable.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                p.value[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::new("w", vec![1.0, -2.0, 3.0]);
        let mut opt = Adam::new(1e-3);
        for _ in 0..5 {
            opt.update(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let g = [0.5, -3.0, 1e-3];
        let mut p = Param::new("w", vec![0.0; 3]);
        p.grad = g.to_vec();
        let mut opt = Adam::new(1e-3);
        opt.update(&mut [&mut p]).unwrap();
        for (v, g) in p.value.iter().zip(g) {
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((v - expected).abs() < 1e-15, "{v} vs {expected}");
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let run = || {
            let mut p = Param::new("w", vec![0.3, -0.1]);
            let mut opt = Adam::new(1e-2);
            for k in 0..100 {
                p.grad = vec![2.0 * p.value[0] - 1.0, (k as f64).sin() * p.value[1]];
                opt.update(&mut [&mut p]).unwrap();
            }
            p.value
        };
        let (a, b) = (run(), run());
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn buffers_are_skipped() {
        let mut w = Param::new("w", vec![1.0]);
        let mut buf = Param::buffer("b", vec![5.0]);
        w.grad = vec![1.0];
        buf.grad = vec![1.0];
        Adam::new(0.1).update(&mut [&mut w, &mut buf]).unwrap();
        assert_eq!(buf.value, vec![5.0]);
        assert!(w.value[0] < 1.0);
    }
}
