//! Batch-norm running statistics, dropout masks, and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng::{unit, Rng};
use crate::tape::BatchStats;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// Inference statistics of one batch-norm layer. The trainable scale and
/// shift live with the other parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average update; the variance is stored unbiased.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        assert_eq!(
            batch.mean.len(),
            self.mean.len(),
            "batch norm channel mismatch"
        );
        let n = batch.count as f64;
        let correction = if batch.count > 1 { n / (n - 1.0) } else { 1.0 };
        for (m, &bm) in self.mean.iter_mut().zip(&batch.mean) {
            *m = (1.0 - momentum) * *m + momentum * bm;
        }
        for (v, &bv) in self.var.iter_mut().zip(&batch.var) {
            *v = ((1.0 - momentum) * *v + momentum * bv * correction).max(0.0);
        }
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut Rng) -> Matrix {
    assert!(
        (0.0..1.0).contains(&rate),
        "dropout rate must lie in [0, 1)"
    );
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| if unit(rng) < rate { 0.0 } else { keep })
}

/// Applies dropout to a plain matrix (used outside the tape).
pub fn dropout(x: &Matrix, rate: f64, mode: Mode, rng: &mut Rng) -> Matrix {
    if mode == Mode::Infer || rate == 0.0 {
        return x.clone();
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, rng);
    x.zip_map(&mask, |a, m| a * m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: impl IntoIterator<Item = usize>) -> Self {
        let (first, second) = shapes
            .into_iter()
            .map(|len| (vec![0.0; len], vec![0.0; len]))
            .unzip();
        Self {
            config,
            step: 0,
            first,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One in-place update. `grads[i]` pairs with `params[i]`; a missing
    /// gradient leaves that parameter and its moments untouched.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<&Matrix>]) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "optimizer slot count mismatch"
        );
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (k, param) in params.iter_mut().enumerate() {
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            assert_eq!(m.len(), param.len(), "optimizer slot shape mismatch");
            let data = param.data_mut();
            let Some(g) = grads[k] else { continue };
            assert_eq!(g.len(), data.len(), "gradient shape mismatch");
            for ((p, &gi), (mi, vi)) in data
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
