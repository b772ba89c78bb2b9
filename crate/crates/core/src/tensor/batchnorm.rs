use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

use super::matrix::Matrix;

pub const DEFAULT_MOMENTUM: f32 = 0.1;
pub const DEFAULT_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-feature batch normalization with learnable scale and shift.
///
/// Train mode normalizes with the batch statistics (biased variance) and folds
/// them into the running estimates (unbiased variance). Eval mode uses only the
/// running estimates and never mutates state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    pub mode: Mode,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    normalized: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Vec<f32>,
    rows: usize,
    mode: Mode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub input: Matrix,
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
            mode: Mode::Train,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Keeps only the listed features, in the given order.
    pub fn select_features(&self, features: &[usize]) -> Self {
        let pick = |v: &[f32]| features.iter().map(|&j| v[j]).collect::<Vec<_>>();
        Self {
            gamma: pick(&self.gamma),
            beta: pick(&self.beta),
            running_mean: pick(&self.running_mean),
            running_var: pick(&self.running_var),
            momentum: self.momentum,
            eps: self.eps,
            mode: self.mode,
        }
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.features() {
            return Err(dim_err(format!(
                "input has {} features, batch norm has {}",
                x.cols(),
                self.features()
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode. Train mode updates running statistics.
    pub fn forward(&mut self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        match self.mode {
            Mode::Eval => self.forward_eval_cached(x),
            Mode::Train => self.forward_train(x),
        }
    }

    /// Eval-mode forward regardless of the stored mode.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        self.forward_eval_cached(x).map(|(y, _)| y)
    }

    fn forward_eval_cached(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check_width(x)?;
        let d = self.features();
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|&v| 1.0 / (f64::from(v) + f64::from(self.eps)).sqrt())
            .collect();
        let mut normalized = Vec::with_capacity(x.rows() * d);
        let mut out = Vec::with_capacity(x.rows() * d);
        for r in x.row_iter() {
            for j in 0..d {
                let h = (f64::from(r[j]) - f64::from(self.running_mean[j])) * inv_std[j];
                normalized.push(h);
                out.push((f64::from(self.gamma[j]) * h + f64::from(self.beta[j])) as f32);
            }
        }
        let cache = BatchNormCache {
            normalized,
            inv_std,
            gamma: self.gamma.clone(),
            rows: x.rows(),
            mode: Mode::Eval,
        };
        Ok((Matrix::from_vec(x.rows(), d, out)?, cache))
    }

    fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check_width(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::DegenerateBatch(format!(
                "train-mode batch norm needs at least 2 samples, got {n}"
            )));
        }
        let d = self.features();
        let mean = x.column_means();
        let mut var = vec![0.0f64; d];
        for r in x.row_iter() {
            for j in 0..d {
                let c = f64::from(r[j]) - mean[j];
                var[j] += c * c;
            }
        }
        let nf = n as f64;
        var.iter_mut().for_each(|v| *v /= nf);
        if let Some(j) = var.iter().position(|&v| v == 0.0) {
            return Err(Error::DegenerateBatch(format!(
                "feature {j} is constant across the batch"
            )));
        }

        let eps = f64::from(self.eps);
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + eps).sqrt()).collect();
        let mut normalized = Vec::with_capacity(n * d);
        let mut out = Vec::with_capacity(n * d);
        for r in x.row_iter() {
            for j in 0..d {
                let h = (f64::from(r[j]) - mean[j]) * inv_std[j];
                normalized.push(h);
                out.push((f64::from(self.gamma[j]) * h + f64::from(self.beta[j])) as f32);
            }
        }

        let m = f64::from(self.momentum);
        let unbias = nf / (nf - 1.0);
        for j in 0..d {
            self.running_mean[j] =
                ((1.0 - m) * f64::from(self.running_mean[j]) + m * mean[j]) as f32;
            self.running_var[j] =
                ((1.0 - m) * f64::from(self.running_var[j]) + m * var[j] * unbias) as f32;
        }

        let cache = BatchNormCache {
            normalized,
            inv_std,
            gamma: self.gamma.clone(),
            rows: n,
            mode: Mode::Train,
        };
        Ok((Matrix::from_vec(n, d, out)?, cache))
    }

    pub fn backward(grad_out: &Matrix, cache: &BatchNormCache) -> Result<BatchNormGrads> {
        let d = cache.gamma.len();
        let n = cache.rows;
        if grad_out.shape() != (n, d) {
            return Err(Error::Contract(format!(
                "upstream gradient is {}x{}, cached forward produced {n}x{d}",
                grad_out.rows(),
                grad_out.cols()
            )));
        }
        let mut g_gamma = vec![0.0f64; d];
        let mut g_beta = vec![0.0f64; d];
        for s in 0..n {
            let g = grad_out.row(s);
            for j in 0..d {
                let gj = f64::from(g[j]);
                g_beta[j] += gj;
                g_gamma[j] += gj * cache.normalized[s * d + j];
            }
        }

        let mut gx = vec![0.0f64; n * d];
        match cache.mode {
            Mode::Eval => {
                for s in 0..n {
                    for j in 0..d {
                        gx[s * d + j] = f64::from(grad_out.get(s, j))
                            * f64::from(cache.gamma[j])
                            * cache.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                // dx = γ/(n·s) · (n·g − Σg − x̂·Σ(g·x̂))
                let nf = n as f64;
                for j in 0..d {
                    let scale = f64::from(cache.gamma[j]) * cache.inv_std[j] / nf;
                    for s in 0..n {
                        let g = f64::from(grad_out.get(s, j));
                        let h = cache.normalized[s * d + j];
                        gx[s * d + j] = scale * (nf * g - g_beta[j] - h * g_gamma[j]);
                    }
                }
            }
        }

        Ok(BatchNormGrads {
            gamma: g_gamma.iter().map(|&v| v as f32).collect(),
            beta: g_beta.iter().map(|&v| v as f32).collect(),
            input: Matrix::from_f64(n, d, &gx)?,
        })
    }
}
