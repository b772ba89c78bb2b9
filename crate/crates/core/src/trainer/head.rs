use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, dim_err, Result};
use crate::tensor::{linear_backward, linear_forward, BatchNorm, BatchNormCache, LinearCache, Matrix, Mode};

/// `U(−b, b)` with `b = √(6 / cols)`, the fan-in uniform initialization.
pub fn kaiming_uniform(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = (6.0 / cols.max(1) as f64).sqrt() as f32;
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("uniform samples are finite")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum HeadInit {
    KaimingUniform { seed: u64 },
    /// Requires `d_out == d_in`.
    Identity,
}

/// Linear layer followed by batch normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    /// d_out × d_in
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct HeadCache {
    linear: LinearCache,
    bn: BatchNormCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

impl ProjectionHead {
    pub fn new(d_in: usize, d_out: usize, init: HeadInit) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(config_err(format!("head of shape {d_out}x{d_in}")));
        }
        let weight = match init {
            HeadInit::KaimingUniform { seed } => kaiming_uniform(d_out, d_in, seed),
            HeadInit::Identity if d_in == d_out => Matrix::identity(d_in),
            HeadInit::Identity => {
                return Err(config_err(format!("identity head needs d_out == d_in, got {d_out} and {d_in}")))
            }
        };
        Ok(Self::from_parts(weight, vec![0.0; d_out]))
    }

    /// Fresh batch normalization over the given linear map.
    pub fn from_parts(weight: Matrix, bias: Vec<f32>) -> Self {
        let bn = BatchNorm::new(weight.rows());
        Self { weight, bias, bn }
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    /// Forward pass in train mode; updates the running statistics.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, HeadCache)> {
        let (z, linear) = linear_forward(&self.weight, Some(&self.bias), x)?;
        self.bn.mode = Mode::Train;
        let (y, bn) = self.bn.forward(&z)?;
        Ok((y, HeadCache { linear, bn }))
    }

    /// Forward pass with the running statistics; never mutates.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        let (z, _) = linear_forward(&self.weight, Some(&self.bias), x)?;
        self.bn.forward_eval(&z)
    }

    pub fn backward(&self, grad_out: &Matrix, cache: &HeadCache) -> Result<HeadGrads> {
        let bn = BatchNorm::backward(grad_out, &cache.bn)?;
        let lin = linear_backward(&bn.input, &cache.linear)?;
        Ok(HeadGrads {
            weight: lin.weight,
            bias: lin.bias.unwrap_or_default(),
            gamma: bn.gamma,
            beta: bn.beta,
        })
    }

    /// Keeps only the listed output features, in the given order.
    pub fn select_outputs(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.d_out()) {
            return Err(dim_err(format!("output {bad} out of range for {} outputs", self.d_out())));
        }
        Ok(Self {
            weight: self.weight.select_rows(rows),
            bias: rows.iter().map(|&r| self.bias[r]).collect(),
            bn: self.bn.select_features(rows),
        })
    }

    /// Mutable views of every trainable tensor, in a fixed order.
    pub(crate) fn params_mut(&mut self) -> [&mut [f32]; 4] {
        [
            self.weight.as_mut_slice(),
            &mut self.bias,
            &mut self.bn.gamma,
            &mut self.bn.beta,
        ]
    }
}

impl HeadGrads {
    pub(crate) fn slices(&self) -> [&[f32]; 4] {
        [self.weight.as_slice(), &self.bias, &self.gamma, &self.beta]
    }
}
