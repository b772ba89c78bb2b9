use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, Item};
use crate::error::{config_err, Result};
use crate::tensor::Matrix;

/// Parameters of the synthetic clique generator.
///
/// Every clique gets a Gaussian center with spread `center_scale`; each member
/// is the center plus Gaussian noise with spread `noise_scale`. When
/// `signal_dim` is smaller than `teacher_dim`, centers live only in the first
/// `signal_dim` coordinates and the remaining coordinates carry per-item
/// nuisance noise of spread `nuisance_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Cliques in the training split.
    pub num_cliques: usize,
    /// Cliques in the validation split (disjoint from training).
    pub val_cliques: usize,
    pub clique_size_min: usize,
    pub clique_size_max: usize,
    /// Success probability of the truncated geometric clique-size law.
    pub size_decay: f64,
    /// Fixed size for every validation clique, overriding the size law.
    pub val_clique_size: Option<usize>,
    pub teacher_dim: usize,
    pub center_scale: f32,
    pub noise_scale: f32,
    /// Unlabeled distractors appended to the validation split.
    pub num_noise_items: usize,
    pub signal_dim: Option<usize>,
    pub nuisance_scale: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::separable()
    }
}

impl SynthConfig {
    /// Centers ten times more spread than the within-clique noise.
    pub fn separable() -> Self {
        Self {
            num_cliques: 200,
            val_cliques: 60,
            clique_size_min: 2,
            clique_size_max: 12,
            size_decay: 0.3,
            val_clique_size: None,
            teacher_dim: 256,
            center_scale: 1.0,
            noise_scale: 0.1,
            num_noise_items: 0,
            signal_dim: None,
            nuisance_scale: 0.0,
            seed: 0,
        }
    }

    /// Evaluation split shaped like the standard benchmark subset: 1,000
    /// cliques of 13 plus 2,000 noise items. Training cliques range from 2 to
    /// 109 members with a long right tail.
    pub fn benchmark() -> Self {
        Self {
            num_cliques: 2_000,
            val_cliques: 1_000,
            clique_size_min: 2,
            clique_size_max: 109,
            size_decay: 0.3,
            val_clique_size: Some(13),
            num_noise_items: 2_000,
            ..Self::separable()
        }
    }

    /// Clique information confined to a 32-dimensional subspace and buried
    /// under nuisance variation of the same order everywhere else.
    pub fn structured() -> Self {
        Self {
            signal_dim: Some(32),
            center_scale: 1.0,
            noise_scale: 0.35,
            nuisance_scale: 1.0,
            ..Self::separable()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_cliques == 0 {
            problems.push("num_cliques must be at least 1".to_string());
        }
        if self.clique_size_min < 2 {
            problems.push(format!("clique_size_min {} < 2", self.clique_size_min));
        }
        if self.clique_size_max < self.clique_size_min {
            problems.push(format!(
                "clique_size_max {} < clique_size_min {}",
                self.clique_size_max, self.clique_size_min
            ));
        }
        if let Some(s) = self.val_clique_size {
            if s < 2 {
                problems.push(format!("val_clique_size {s} < 2"));
            }
        }
        if !(self.size_decay > 0.0 && self.size_decay <= 1.0) {
            problems.push(format!("size_decay {} outside (0, 1]", self.size_decay));
        }
        if self.teacher_dim == 0 {
            problems.push("teacher_dim must be at least 1".to_string());
        }
        if let Some(s) = self.signal_dim {
            if s == 0 || s > self.teacher_dim {
                problems.push(format!("signal_dim {s} outside [1, {}]", self.teacher_dim));
            }
        }
        for (name, v) in [
            ("center_scale", self.center_scale),
            ("noise_scale", self.noise_scale),
            ("nuisance_scale", self.nuisance_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} {v} must be finite and non-negative"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(config_err(problems.join("; ")))
        }
    }
}

struct Generator {
    rng: ChaCha8Rng,
    std_normal: Normal<f64>,
    dim: usize,
    signal_dim: usize,
    center_scale: f64,
    noise_scale: f64,
    nuisance_scale: f64,
}

impl Generator {
    fn gauss(&mut self) -> f64 {
        self.std_normal.sample(&mut self.rng)
    }

    fn center(&mut self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                if j < self.signal_dim {
                    self.center_scale * self.gauss()
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn member(&mut self, center: &[f64], out: &mut Vec<f32>) {
        for (j, &c) in center.iter().enumerate() {
            let spread = if j < self.signal_dim {
                self.noise_scale
            } else {
                self.nuisance_scale
            };
            out.push((c + spread * self.gauss()) as f32);
        }
    }
}

/// Draws disjoint training and validation splits. Noise items only ever land
/// in the validation split.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(EmbeddingSet, EmbeddingSet)> {
    cfg.validate()?;
    let mut gen = Generator {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        std_normal: Normal::new(0.0, 1.0).expect("unit normal"),
        dim: cfg.teacher_dim,
        signal_dim: cfg.signal_dim.unwrap_or(cfg.teacher_dim),
        center_scale: f64::from(cfg.center_scale),
        noise_scale: f64::from(cfg.noise_scale),
        nuisance_scale: f64::from(cfg.nuisance_scale),
    };
    let span = cfg.clique_size_max - cfg.clique_size_min;
    let keep = 1.0 - cfg.size_decay;
    let weights: Vec<f64> = (0..=span).map(|k| keep.powi(k as i32).max(1e-300)).collect();
    let sizes = WeightedIndex::new(&weights).map_err(|e| config_err(e.to_string()))?;

    let split = |gen: &mut Generator, prefix: &str, first: usize, count: usize, fixed: Option<usize>| {
        let mut items = Vec::new();
        let mut data = Vec::new();
        for c in first..first + count {
            let size = fixed.unwrap_or_else(|| cfg.clique_size_min + sizes.sample(&mut gen.rng));
            let center = gen.center();
            for k in 0..size {
                items.push(Item::new(format!("{prefix}{c}-{k}"), Some(c as u32)));
                gen.member(&center, &mut data);
            }
        }
        (items, data)
    };

    let (train_items, train_data) = split(&mut gen, "c", 0, cfg.num_cliques, None);
    let (mut val_items, mut val_data) =
        split(&mut gen, "c", cfg.num_cliques, cfg.val_cliques, cfg.val_clique_size);
    for i in 0..cfg.num_noise_items {
        let center = gen.center();
        val_items.push(Item::new(format!("noise-{i}"), None));
        gen.member(&center, &mut val_data);
    }

    let d = cfg.teacher_dim;
    let train = EmbeddingSet::new(
        train_items,
        Matrix::from_vec(train_data.len() / d, d, train_data)?,
    )?;
    let val = EmbeddingSet::new(val_items, Matrix::from_vec(val_data.len() / d, d, val_data)?)?;
    Ok((train, val))
}

/// Replaces every vector with i.i.d. standard normal noise of width `dim`,
/// keeping the items. Features produced this way carry no clique information.
pub fn random_features(set: &EmbeddingSet, dim: usize, seed: u64) -> Result<EmbeddingSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 1.0).expect("unit normal");
    let data = (0..set.len() * dim).map(|_| normal.sample(&mut rng)).collect();
    set.with_vectors(Matrix::from_vec(set.len(), dim, data)?)
}
