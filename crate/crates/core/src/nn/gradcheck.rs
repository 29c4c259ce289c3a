use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode, Tensor};
use crate::error::Result;

/// Outcome of a finite-difference comparison.
///
/// The per-element error is `|a − n| / max(|a|, |n|, floor)` where the
/// floor is `1e-3` times the largest analytic magnitude, so entries many
/// orders below the gradient's scale are judged on that scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Label and index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn empty() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
        }
    }

    fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error.max(self.max_rel_error);
            self.worst = other.worst;
        }
        self.checked += other.checked;
    }
}

fn floor(analytic: &[f64]) -> f64 {
    1e-3 * analytic.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-300
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of `f` at `x` against `analytic`.
pub fn grad_check(
    label: &str,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len());
    let fl = floor(analytic);
    let mut rep = GradCheckReport::empty();
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let fp = f(&xp);
        xp[i] = x[i] - eps;
        let fm = f(&xp);
        xp[i] = x[i];
        let e = rel_error(analytic[i], (fp - fm) / (2.0 * eps), fl);
        if e > rep.max_rel_error || rep.worst.is_none() {
            rep.max_rel_error = rep.max_rel_error.max(e);
            rep.worst = Some((label.to_string(), i));
        }
        rep.checked += 1;
    }
    rep
}

/// Checks input and trainable-parameter gradients of a layer under the
/// loss `Σ r ⊙ y` with a fixed random `r`.
pub fn check_layer(layer: &mut Layer, x: &Tensor, mode: Mode, eps: f64, seed: u64) -> Result<GradCheckReport> {
    let y = layer.forward(x, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let dy = Tensor::new(y.shape().to_vec(), r.clone())?;
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&dy)?;

    let loss = |layer: &mut Layer, input: &Tensor| -> f64 {
        let y = layer.forward(input, mode).expect("forward succeeded once");
        y.data().iter().zip(&r).map(|(a, b)| a * b).sum()
    };

    let mut rep = {
        let shape = x.shape().to_vec();
        grad_check("input", x.data(), dx.data(), eps, |v| {
            loss(layer, &Tensor::new(shape.clone(), v.to_vec()).expect("same shape"))
        })
    };
    let n_params = layer.params().len();
    for k in 0..n_params {
        let (name, value, grad, trainable) = {
            let p = &layer.params()[k];
            (p.name.clone(), p.value.clone(), p.grad.clone(), p.trainable)
        };
        if !trainable {
            continue;
        }
        let sub = grad_check(&name, &value, &grad, eps, |v| {
            layer.params_mut()[k].value.copy_from_slice(v);
            loss(layer, x)
        });
        layer.params_mut()[k].value.copy_from_slice(&value);
        rep.merge(sub);
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Reshape};

    #[test]
    fn identity_module_has_no_error() {
        let x = Tensor::new(vec![2, 4], vec![0.5, -1.0, 2.0, 0.25, 1.0, -0.75, 0.125, 3.0]).unwrap();
        let mut id = Layer::Reshape(Reshape::new(vec![4]));
        let rep = check_layer(&mut id, &x, Mode::Train, 1e-3, 0).unwrap();
        assert!(rep.max_rel_error < 1e-10, "{rep:?}");
        assert_eq!(rep.checked, 8);
    }

    #[test]
    fn corrupted_backward_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new("l", 3, 2, &mut rng);
        let x: Vec<f64> = (0..6).map(|i| 0.3 * i as f64 - 0.7).collect();
        let mut good = lin.clone();
        let y = good.forward(&Tensor::new(vec![2, 3], x.clone()).unwrap(), Mode::Train).unwrap();
        let mut dx = good.backward(&Tensor::new(y.shape().to_vec(), vec![1.0; 4]).unwrap()).unwrap().into_data();
        // negate one term of the input gradient
        dx[2] = -dx[2];
        let rep = grad_check("input", &x, &dx, 1e-5, |v| {
            let mut l = lin.clone();
            l.forward(&Tensor::new(vec![2, 3], v.to_vec()).unwrap(), Mode::Train)
                .unwrap()
                .data()
                .iter()
                .sum()
        });
        assert!(rep.max_rel_error > 1e-3);
        assert_eq!(rep.worst, Some(("input".to_string(), 2)));
    }
}
