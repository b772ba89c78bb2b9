//! Training criteria with analytic gradients.
//!
//! Every loss reads 32-bit inputs, computes in 64-bit, averages over the batch
//! and returns gradients for each trainable input it touches. Distances are the
//! dimension-normalized squared Euclidean distance unless stated otherwise.

mod distill;
mod group;
mod proxy;
mod triplet;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CliqueId, EmbeddingSet};
use crate::error::{config_err, dim_err, Error, Result};
use crate::tensor::Matrix;

pub use distill::{db_cluster_loss, distance_matching_loss, DB_EPS};
pub use group::{group_loss, replicator_step, GroupConfig, LOG_CLAMP};
pub use proxy::{normalized_softmax_loss, proxynca_loss};
pub use triplet::{mine_triplets, triplet_loss, triplet_term, Triplet};

/// Side-channel counters a loss raises instead of failing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossDiagnostics {
    /// Triplet anchors dropped for lack of an in-batch positive or negative.
    pub skipped_anchors: usize,
    /// Denominators that needed an epsilon to stay away from zero.
    pub stabilized: usize,
}

impl std::ops::AddAssign for LossDiagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.skipped_anchors += rhs.skipped_anchors;
        self.stabilized += rhs.stabilized;
    }
}

/// Gradient of a linear map `y = W·x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionGrads {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    /// Batch mean.
    pub value: f64,
    /// Gradient with respect to the (student) embeddings.
    pub embeddings: Matrix,
    /// Gradient with respect to every proxy in the bank, for proxy losses.
    pub proxies: Option<Matrix>,
    /// Gradient with respect to the centroid projection, for cluster matching.
    pub projection: Option<ProjectionGrads>,
    pub diagnostics: LossDiagnostics,
}

/// One trainable vector per training class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyBank {
    pub proxies: Matrix,
    pub class_ids: Vec<CliqueId>,
    #[serde(skip)]
    index: HashMap<CliqueId, usize>,
}

impl ProxyBank {
    pub fn new(proxies: Matrix, class_ids: Vec<CliqueId>) -> Result<Self> {
        if proxies.rows() != class_ids.len() {
            return Err(dim_err(format!(
                "{} proxies for {} classes",
                proxies.rows(),
                class_ids.len()
            )));
        }
        let index = build_index(&class_ids)?;
        Ok(Self {
            proxies,
            class_ids,
            index,
        })
    }

    /// Proxies drawn from N(0, std²).
    pub fn random(class_ids: Vec<CliqueId>, dim: usize, std: f32, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, std).map_err(|e| config_err(e.to_string()))?;
        let data = (0..class_ids.len() * dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(Matrix::from_vec(class_ids.len(), dim, data)?, class_ids)
    }

    pub fn dim(&self) -> usize {
        self.proxies.cols()
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    pub fn row_of(&self, class: CliqueId) -> Result<usize> {
        self.index
            .get(&class)
            .copied()
            .ok_or_else(|| config_err(format!("no proxy for class {class}")))
    }

    pub(crate) fn rebuild_index(&mut self) -> Result<()> {
        self.index = build_index(&self.class_ids)?;
        Ok(())
    }
}

fn build_index(ids: &[CliqueId]) -> Result<HashMap<CliqueId, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, &c) in ids.iter().enumerate() {
        if index.insert(c, i).is_some() {
            return Err(config_err(format!("class {c} listed twice")));
        }
    }
    Ok(index)
}

/// Frozen teacher-space class centroids plus the trainable linear map that
/// carries them into the student space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidBank {
    pub centroids: Matrix,
    pub class_ids: Vec<CliqueId>,
    /// d_student × d_teacher
    pub weight: Matrix,
    pub bias: Vec<f32>,
    #[serde(skip)]
    index: HashMap<CliqueId, usize>,
}

impl CentroidBank {
    pub fn new(centroids: Matrix, class_ids: Vec<CliqueId>, weight: Matrix, bias: Vec<f32>) -> Result<Self> {
        if centroids.rows() != class_ids.len() {
            return Err(dim_err(format!(
                "{} centroids for {} classes",
                centroids.rows(),
                class_ids.len()
            )));
        }
        if weight.cols() != centroids.cols() || bias.len() != weight.rows() {
            return Err(dim_err(format!(
                "projection {}x{} with {} biases cannot map {}-dim centroids",
                weight.rows(),
                weight.cols(),
                bias.len(),
                centroids.cols()
            )));
        }
        let index = build_index(&class_ids)?;
        Ok(Self {
            centroids,
            class_ids,
            weight,
            bias,
            index,
        })
    }

    /// Class means of the teacher embeddings, with a uniform fan-in
    /// initialization of the projection.
    pub fn from_teacher(teacher: &EmbeddingSet, student_dim: usize, seed: u64) -> Result<Self> {
        let members = teacher.clique_members();
        let d = teacher.dim();
        let mut centroids = Vec::with_capacity(members.len() * d);
        let mut ids = Vec::with_capacity(members.len());
        for (c, rows) in &members {
            let sub = teacher.vectors().select_rows(rows);
            centroids.extend(sub.column_means().iter().map(|&v| v as f32));
            ids.push(*c);
        }
        let centroids = Matrix::from_vec(ids.len(), d, centroids)?;
        let weight = crate::trainer::kaiming_uniform(student_dim, d, seed);
        Self::new(centroids, ids, weight, vec![0.0; student_dim])
    }

    pub fn row_of(&self, class: CliqueId) -> Result<usize> {
        self.index
            .get(&class)
            .copied()
            .ok_or_else(|| config_err(format!("no centroid for class {class}")))
    }

    pub fn student_dim(&self) -> usize {
        self.weight.rows()
    }

    pub(crate) fn rebuild_index(&mut self) -> Result<()> {
        self.index = build_index(&self.class_ids)?;
        Ok(())
    }
}

/// Row-major 64-bit copy of a matrix with the dimensionality alongside.
pub(crate) struct Rows {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Rows {
    pub fn new(m: &Matrix) -> Self {
        Self {
            n: m.rows(),
            d: m.cols(),
            data: m.to_f64(),
        }
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            data: vec![0.0; n * d],
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn into_matrix(self) -> Result<Matrix> {
        Matrix::from_f64(self.n, self.d, &self.data)
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Adds `scale · ∂D(a,b)/∂a` to `ga` and its negation to `gb`.
#[inline]
pub(crate) fn accumulate_sq_dist_grad(a: &[f64], b: &[f64], scale: f64, ga: &mut [f64], gb: Option<&mut [f64]>) {
    let k = 2.0 * scale / a.len() as f64;
    match gb {
        Some(gb) => {
            for j in 0..a.len() {
                let g = k * (a[j] - b[j]);
                ga[j] += g;
                gb[j] -= g;
            }
        }
        None => {
            for j in 0..a.len() {
                ga[j] += k * (a[j] - b[j]);
            }
        }
    }
}

pub(crate) fn check_labels(emb: &Matrix, labels: &[CliqueId]) -> Result<()> {
    if emb.rows() != labels.len() {
        return Err(dim_err(format!(
            "{} embeddings with {} labels",
            emb.rows(),
            labels.len()
        )));
    }
    if emb.rows() == 0 || emb.cols() == 0 {
        return Err(Error::DegenerateBatch("empty batch".into()));
    }
    Ok(())
}

/// Distinct labels in order of first appearance.
pub(crate) fn batch_classes(labels: &[CliqueId]) -> Vec<CliqueId> {
    let mut seen = Vec::new();
    for &l in labels {
        if !seen.contains(&l) {
            seen.push(l);
        }
    }
    seen
}

/// Numerically stable `log Σ exp(xs)`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
