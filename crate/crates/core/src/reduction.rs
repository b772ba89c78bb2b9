//! Unsupervised reduction of fitted embeddings: PCA, FastICA and Gaussian
//! random projection.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{config_err, dim_err, Error, Result};
use crate::tensor::Matrix;

pub const REDUCER_MAGIC: &[u8; 4] = b"RDCR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReducerKind {
    Pca,
    Ica,
    Grp,
}

impl std::str::FromStr for ReducerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Self::Pca),
            "ica" => Ok(Self::Ica),
            "grp" => Ok(Self::Grp),
            other => Err(config_err(format!("unknown reducer {other:?}"))),
        }
    }
}

/// A fitted linear reduction `x ↦ C·(x − μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reducer {
    pub kind: ReducerKind,
    /// Fit-data mean; absent for random projection, which does not center.
    pub mean: Option<Vec<f32>>,
    /// k×d matrix applied on the right of the centered input.
    pub components: Matrix,
    /// (rows, cols) of the fit data. Random projection records (0, d).
    pub fitted_on: (usize, usize),
    /// Variance captured by each PCA component, non-increasing.
    pub explained_variance: Option<Vec<f64>>,
    pub iterations: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct ReducerTrailer {
    kind: ReducerKind,
    target_dim: usize,
    input_dim: usize,
    fitted_on: (usize, usize),
    has_mean: bool,
    explained_variance: Option<Vec<f64>>,
    iterations: Option<usize>,
}

impl Reducer {
    pub fn target_dim(&self) -> usize {
        self.components.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.cols()
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        transform(self, x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (k, d) = self.components.shape();
        let mut payload = self.components.as_slice().to_vec();
        if let Some(m) = &self.mean {
            payload.extend_from_slice(m);
        }
        let rows = k + usize::from(self.mean.is_some());
        let trailer = ReducerTrailer {
            kind: self.kind,
            target_dim: k,
            input_dim: d,
            fitted_on: self.fitted_on,
            has_mean: self.mean.is_some(),
            explained_variance: self.explained_variance.clone(),
            iterations: self.iterations,
        };
        container::write_file(path.as_ref(), REDUCER_MAGIC, rows, d, &payload, &trailer)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c = container::read_file(path.as_ref(), REDUCER_MAGIC)?;
        let t: ReducerTrailer = c.trailer_as()?;
        let expected_rows = t.target_dim + usize::from(t.has_mean);
        if c.rows != expected_rows || c.cols != t.input_dim {
            return Err(Error::Format {
                offset: c.trailer_offset,
                message: format!(
                    "header {}x{} disagrees with trailer ({expected_rows}x{})",
                    c.rows, c.cols, t.input_dim
                ),
            });
        }
        let mut payload = c.payload;
        let mean = t.has_mean.then(|| payload.split_off(t.target_dim * t.input_dim));
        Ok(Self {
            kind: t.kind,
            mean,
            components: Matrix::from_vec(t.target_dim, t.input_dim, payload)?,
            fitted_on: t.fitted_on,
            explained_variance: t.explained_variance,
            iterations: t.iterations,
        })
    }
}

fn centered(x: &Matrix) -> (Vec<f64>, DMatrix<f64>) {
    let mean = x.column_means();
    let m = DMatrix::from_fn(x.rows(), x.cols(), |i, j| f64::from(x.get(i, j)) - mean[j]);
    (mean, m)
}

fn check_k(x: &Matrix, k: usize) -> Result<()> {
    let limit = x.rows().saturating_sub(1).min(x.cols());
    if k == 0 || k > limit {
        return Err(config_err(format!(
            "target dimension {k} outside [1, min(n-1, d)] = [1, {limit}] for {}x{} data",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Top right-singular vectors of the centered data, largest variance first,
/// each with its largest-magnitude entry positive. Columns of the result are
/// components; `variance` holds `s²/(n−1)`.
fn principal_axes(centered: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = centered.nrows();
    let svd = centered.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let d = centered.ncols();
    let mut axes = DMatrix::zeros(d, k);
    let mut variance = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let row = v_t.row(idx);
        let pivot = row.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            axes[(j, c)] = sign * row[j];
        }
        let s = svd.singular_values[idx];
        variance.push(s * s / (n as f64 - 1.0));
    }
    Ok((axes, variance))
}

fn to_matrix_rows(m: &DMatrix<f64>) -> Result<Matrix> {
    let data: Vec<f64> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    Matrix::from_f64(m.nrows(), m.ncols(), &data)
}

pub fn fit_pca(x: &Matrix, k: usize) -> Result<Reducer> {
    check_k(x, k)?;
    let (mean, c) = centered(x);
    let (axes, variance) = principal_axes(&c, k)?;
    Ok(Reducer {
        kind: ReducerKind::Pca,
        mean: Some(mean.iter().map(|&v| v as f32).collect()),
        components: to_matrix_rows(&axes.transpose())?,
        fitted_on: x.shape(),
        explained_variance: Some(variance),
        iterations: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcaConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Scale `a` of the logcosh contrast `G(u) = log cosh(a·u) / a`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            alpha: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonConvergence {
    pub iterations: usize,
    pub final_delta: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IcaFit {
    Converged(Reducer),
    NotConverged(NonConvergence),
}

impl IcaFit {
    pub fn converged(self) -> Option<Reducer> {
        match self {
            Self::Converged(r) => Some(r),
            Self::NotConverged(_) => None,
        }
    }
}

/// `(W·Wᵀ)^{-1/2}·W`
fn symmetric_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(1e-300).sqrt()));
    &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose() * w
}

/// FastICA with PCA whitening to `k` dimensions, symmetric decorrelation and
/// the logcosh contrast.
pub fn fit_ica(x: &Matrix, k: usize, cfg: &IcaConfig) -> Result<IcaFit> {
    check_k(x, k)?;
    if cfg.max_iter == 0 || !(cfg.tol > 0.0) || !(cfg.alpha > 0.0) {
        return Err(config_err("ICA needs max_iter >= 1, tol > 0 and alpha > 0"));
    }
    let n = x.rows();
    let (mean, c) = centered(x);
    let (axes, variance) = principal_axes(&c, k)?;
    if let Some(v) = variance.iter().find(|&&v| v <= 0.0) {
        return Err(Error::Degenerate(format!("whitening hit a zero-variance direction ({v})")));
    }
    // Whitening with unit variance under 1/n normalization.
    let nf = n as f64;
    let scale: Vec<f64> = variance
        .iter()
        .map(|&v| 1.0 / (v * (nf - 1.0) / nf).sqrt())
        .collect();
    let whitening = DMatrix::from_fn(k, axes.nrows(), |i, j| axes[(j, i)] * scale[i]);
    let z = &c * whitening.transpose(); // n×k

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut w = symmetric_decorrelation(&DMatrix::from_fn(k, k, |_, _| normal.sample(&mut rng)));

    let a = cfg.alpha;
    let mut delta = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let u = &z * w.transpose(); // n×k
        let g = u.map(|v| (a * v).tanh());
        let g_prime_mean: Vec<f64> = (0..k)
            .map(|j| g.column(j).iter().map(|t| a * (1.0 - t * t)).sum::<f64>() / nf)
            .collect();
        let mut next = g.transpose() * &z / nf;
        for i in 0..k {
            for j in 0..k {
                next[(i, j)] -= g_prime_mean[i] * w[(i, j)];
            }
        }
        let next = symmetric_decorrelation(&next);
        let agreement = &next * w.transpose();
        delta = (0..k)
            .map(|i| (agreement[(i, i)].abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if delta < cfg.tol {
            let unmixing = &w * &whitening;
            return Ok(IcaFit::Converged(Reducer {
                kind: ReducerKind::Ica,
                mean: Some(mean.iter().map(|&v| v as f32).collect()),
                components: to_matrix_rows(&unmixing)?,
                fitted_on: x.shape(),
                explained_variance: None,
                iterations: Some(iterations),
            }));
        }
    }
    Ok(IcaFit::NotConverged(NonConvergence {
        iterations,
        final_delta: delta,
        tol: cfg.tol,
    }))
}

/// Gaussian random projection with entries drawn i.i.d. from N(0, 1/k).
pub fn fit_grp(d: usize, k: usize, seed: u64) -> Result<Reducer> {
    if k == 0 || d == 0 {
        return Err(config_err(format!("random projection needs d, k >= 1 (d={d}, k={k})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, (1.0 / k as f64).sqrt()).map_err(|e| config_err(e.to_string()))?;
    let data: Vec<f64> = (0..k * d).map(|_| normal.sample(&mut rng)).collect();
    Ok(Reducer {
        kind: ReducerKind::Grp,
        mean: None,
        components: Matrix::from_f64(k, d, &data)?,
        fitted_on: (0, d),
        explained_variance: None,
        iterations: None,
    })
}

pub fn transform(r: &Reducer, x: &Matrix) -> Result<Matrix> {
    let d = r.input_dim();
    if x.cols() != d {
        return Err(dim_err(format!("reducer expects {d} dims, got {}", x.cols())));
    }
    let k = r.target_dim();
    let mut out = Vec::with_capacity(x.rows() * k);
    let mut buf = vec![0.0f64; d];
    for row in x.row_iter() {
        for j in 0..d {
            let m = r.mean.as_ref().map_or(0.0, |m| f64::from(m[j]));
            buf[j] = f64::from(row[j]) - m;
        }
        for c in r.components.row_iter() {
            let acc: f64 = c.iter().zip(&buf).map(|(&w, &v)| f64::from(w) * v).sum();
            out.push(acc as f32);
        }
    }
    Matrix::from_vec(x.rows(), k, out)
}
