//! Linear probe: L2-regularized logistic regression on standardized features,
//! fitted by full-batch gradient descent from zero.

use ndarray::{Array1, Axis};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub l2: f64,
    pub lr: f64,
    pub iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            lr: 0.5,
            iters: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    mean: Array1<f64>,
    scale: Array1<f64>,
    weight: Array1<f64>,
    bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearProbe {
    pub fn fit(x: &Tensor, y: &[u8], cfg: ProbeConfig) -> Result<Self> {
        let n = x.nrows();
        if n != y.len() || n == 0 {
            return Err(Error::shape("probe labels", n, y.len()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0);
        let scale = std.mapv(|s| if s > 1e-12 { 1.0 / s } else { 0.0 });
        let z = (x - &mean) * &scale;
        let yf = Array1::from_iter(y.iter().map(|&v| v as f64));
        let mut w = Array1::zeros(x.ncols());
        let mut b = 0.0;
        for _ in 0..cfg.iters {
            let p = (z.dot(&w) + b).mapv(sigmoid);
            let r = &p - &yf;
            let gw = z.t().dot(&r) / n as f64 + cfg.l2 * &w;
            let gb = r.sum() / n as f64;
            w.scaled_add(-cfg.lr, &gw);
            b -= cfg.lr * gb;
        }
        Ok(Self {
            mean,
            scale,
            weight: w,
            bias: b,
        })
    }

    pub fn predict_proba(&self, x: &Tensor) -> Array1<f64> {
        let z = (x - &self.mean) * &self.scale;
        (z.dot(&self.weight) + self.bias).mapv(sigmoid)
    }

    pub fn accuracy(&self, x: &Tensor, y: &[u8]) -> f64 {
        let p = self.predict_proba(x);
        let hits = p
            .iter()
            .zip(y)
            .filter(|(&p, &l)| (p > 0.5) == (l == 1))
            .count();
        hits as f64 / y.len().max(1) as f64
    }
}

/// Fit on one set, report accuracy on another.
pub fn probe_accuracy(train_x: &Tensor, train_y: &[u8], test_x: &Tensor, test_y: &[u8]) -> Result<f64> {
    Ok(LinearProbe::fit(train_x, train_y, ProbeConfig::default())?.accuracy(test_x, test_y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separable_data() {
        let x = array![[0.0, 1.0], [0.2, 0.9], [1.0, 0.1], [0.9, 0.0]];
        let y = [0, 0, 1, 1];
        let p = LinearProbe::fit(&x, &y, ProbeConfig::default()).unwrap();
        assert_eq!(p.accuracy(&x, &y), 1.0);
    }

    #[test]
    fn constant_features_give_chance() {
        let x = Tensor::ones((6, 3));
        let y = [0, 1, 0, 1, 0, 1];
        let p = LinearProbe::fit(&x, &y, ProbeConfig::default()).unwrap();
        let proba = p.predict_proba(&x);
        assert!(proba.iter().all(|v| (v - 0.5).abs() < 1e-12));
    }
}
