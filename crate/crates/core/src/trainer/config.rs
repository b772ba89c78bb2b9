use serde::{Deserialize, Serialize};

use super::optim::OptimizerKind;
use crate::dataset::BatchSpec;
use crate::error::{config_err, Error, Result};
use crate::retrieval::Metric;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Triplet,
    ProxyNca,
    NormalizedSoftmax,
    Group,
    DistanceMatching,
    ClusterMatching,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        Self::Triplet,
        Self::ProxyNca,
        Self::NormalizedSoftmax,
        Self::Group,
        Self::DistanceMatching,
        Self::ClusterMatching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Triplet => "triplet",
            Self::ProxyNca => "proxy-nca",
            Self::NormalizedSoftmax => "normalized-softmax",
            Self::Group => "group",
            Self::DistanceMatching => "distance-matching",
            Self::ClusterMatching => "cluster-matching",
        }
    }

    /// Losses that need teacher embeddings.
    pub fn is_distillation(self) -> bool {
        matches!(self, Self::DistanceMatching | Self::ClusterMatching)
    }

    pub fn uses_proxies(self) -> bool {
        matches!(self, Self::ProxyNca | Self::NormalizedSoftmax)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config_err(format!("unknown loss `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Triplet margin.
    pub margin: f64,
    /// NormalizedSoftmax temperature.
    pub temperature: f64,
    /// Replicator steps for the group loss.
    pub iterations: usize,
    /// Weight of an added batch-hard triplet term; 0 disables it.
    pub aux_triplet_weight: f64,
    /// Standard deviation of the initial proxies.
    pub proxy_std: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::NormalizedSoftmax,
            margin: 1.0,
            temperature: 0.05,
            iterations: 3,
            aux_triplet_weight: 0.0,
            proxy_std: 0.01,
        }
    }
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    /// Overrides the sampler's one-pass-per-epoch batch count.
    pub batches_per_epoch: Option<usize>,
    pub seed: u64,
    /// Metric for validation retrieval.
    pub metric: Metric,
    /// Input features are fixed; only `true` is supported.
    pub freeze_extractor: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            optimizer: OptimizerKind::SgdMomentum,
            lr: 0.01,
            momentum: 0.9,
            epochs: 70,
            milestones: vec![50, 60],
            lr_decay: 0.1,
            classes_per_batch: 16,
            samples_per_class: 4,
            batches_per_epoch: None,
            seed: 0,
            metric: Metric::SquaredEuclidean,
            freeze_extractor: true,
        }
    }
}

impl TrainConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            loss: LossConfig::new(kind),
            ..Self::default()
        }
    }

    /// Shortens the run to `epochs`, keeping the milestones at the same
    /// fractions of the budget.
    pub fn short_budget(mut self, epochs: usize) -> Self {
        let full = self.epochs.max(1);
        self.milestones = self
            .milestones
            .iter()
            .map(|&m| m * epochs / full)
            .filter(|&m| m > 0 && m < epochs)
            .collect();
        self.milestones.dedup();
        self.epochs = epochs;
        self
    }

    pub fn batch_spec(&self) -> BatchSpec {
        BatchSpec {
            classes_per_batch: self.classes_per_batch,
            samples_per_class: self.samples_per_class,
            seed: self.seed,
        }
    }

    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            out.push(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            out.push(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            out.push(format!("milestones must be strictly increasing, got {:?}", self.milestones));
        }
        if self.epochs > 0 {
            if let Some(m) = self.milestones.iter().find(|&&m| m >= self.epochs) {
                out.push(format!("milestone {m} is not below the {} epochs", self.epochs));
            }
        }
        if self.classes_per_batch < 2 {
            out.push(format!("classes_per_batch must be at least 2, got {}", self.classes_per_batch));
        }
        if self.samples_per_class < 2 {
            out.push(format!("samples_per_class must be at least 2, got {}", self.samples_per_class));
        }
        if self.batches_per_epoch == Some(0) {
            out.push("batches_per_epoch must be positive".into());
        }
        if !self.freeze_extractor {
            out.push("only frozen input features are supported (freeze_extractor = true)".into());
        }
        let l = &self.loss;
        if !(l.margin.is_finite() && l.margin >= 0.0) {
            out.push(format!("margin must be non-negative, got {}", l.margin));
        }
        if !(l.temperature.is_finite() && l.temperature > 0.0) {
            out.push(format!("temperature must be positive, got {}", l.temperature));
        }
        if !(l.aux_triplet_weight.is_finite() && l.aux_triplet_weight >= 0.0) {
            out.push(format!("aux_triplet_weight must be non-negative, got {}", l.aux_triplet_weight));
        }
        if !(l.proxy_std.is_finite() && l.proxy_std > 0.0) {
            out.push(format!("proxy_std must be positive, got {}", l.proxy_std));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(config_err(v.join("; ")))
        }
    }
}

/// `lr₀ · decay^k` where `k` counts the milestones at or before `epoch`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = cfg.milestones.iter().filter(|&&m| m <= epoch).count() as i32;
    // dividing by the reciprocal keeps 0.1 / 10 at exactly 0.01
    cfg.lr / (1.0 / cfg.lr_decay).powi(k)
}
