//! Training of projection heads on fixed input features.
//!
//! A [`ProjectionHead`] maps input features to a compact embedding. [`train`]
//! optimizes it (together with proxies or the centroid projection when the
//! loss needs them), evaluates retrieval on the validation split after every
//! epoch and keeps the best-scoring [`Checkpoint`].

mod checkpoint;
mod config;
mod grid;
mod head;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{lr_schedule, LossConfig, LossKind, TrainConfig};
pub use grid::{grid_search, grid_search_with, Grid, GridCell, GridResult};
pub use head::{kaiming_uniform, HeadCache, HeadGrads, HeadInit, ProjectionHead};
pub use optim::{adam_step, sgd_step, AdamState, OptimizerKind, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::dataset::{BatchSampler, CliqueId, EmbeddingSet, EpochState};
use crate::error::{config_err, dim_err, DivergenceReport, Error, Result};
use crate::losses::{
    db_cluster_loss, distance_matching_loss, group_loss, normalized_softmax_loss, proxynca_loss, triplet_loss,
    CentroidBank, GroupConfig, LossDiagnostics, LossOutput, ProxyBank,
};
use crate::retrieval::evaluate;
use crate::tensor::Matrix;

/// Inputs for one training run. `teacher` holds the teacher embedding of
/// every training row and is required by the distillation losses.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a EmbeddingSet,
    pub val: &'a EmbeddingSet,
    pub teacher: Option<&'a Matrix>,
}

impl<'a> TrainData<'a> {
    pub fn new(train: &'a EmbeddingSet, val: &'a EmbeddingSet) -> Self {
        Self { train, val, teacher: None }
    }

    pub fn with_teacher(mut self, teacher: &'a Matrix) -> Self {
        self.teacher = Some(teacher);
        self
    }
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_map: f64,
    pub val_mr1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    /// State after the final epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Summed over every batch of the run.
    pub diagnostics: LossDiagnostics,
}

pub fn write_history_csv(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Applies the head in eval mode to every item of `set`.
pub fn embed(head: &ProjectionHead, set: &EmbeddingSet) -> Result<EmbeddingSet> {
    set.with_vectors(head.forward_eval(set.vectors())?)
}

fn loss_for_batch(
    cfg: &LossConfig,
    emb: &Matrix,
    labels: &[CliqueId],
    teacher: Option<&Matrix>,
    proxies: Option<&ProxyBank>,
    centroids: Option<&CentroidBank>,
) -> Result<LossOutput> {
    let missing = |what: &str| Error::State(format!("{} loss is missing its {what}", cfg.kind));
    let mut out = match cfg.kind {
        LossKind::Triplet => triplet_loss(emb, labels, cfg.margin)?,
        LossKind::ProxyNca => proxynca_loss(emb, labels, proxies.ok_or_else(|| missing("proxies"))?)?,
        LossKind::NormalizedSoftmax => {
            normalized_softmax_loss(emb, labels, proxies.ok_or_else(|| missing("proxies"))?, cfg.temperature)?
        }
        LossKind::Group => group_loss(emb, labels, None, &GroupConfig { iterations: cfg.iterations })?,
        LossKind::DistanceMatching => distance_matching_loss(emb, teacher.ok_or_else(|| missing("teacher"))?)?,
        LossKind::ClusterMatching => db_cluster_loss(emb, labels, centroids.ok_or_else(|| missing("centroids"))?)?,
    };
    if cfg.aux_triplet_weight > 0.0 && cfg.kind != LossKind::Triplet {
        let aux = triplet_loss(emb, labels, cfg.margin)?;
        let w = cfg.aux_triplet_weight;
        out.value += w * aux.value;
        let sum: Vec<f32> = out
            .embeddings
            .as_slice()
            .iter()
            .zip(aux.embeddings.as_slice())
            .map(|(&a, &b)| (f64::from(a) + w * f64::from(b)) as f32)
            .collect();
        out.embeddings = Matrix::from_vec(emb.rows(), emb.cols(), sum)?;
        out.diagnostics += aux.diagnostics;
    }
    Ok(out)
}

/// Trainable state besides the head.
struct Banks {
    proxies: Option<ProxyBank>,
    centroids: Option<CentroidBank>,
}

impl Banks {
    fn init(head: &ProjectionHead, data: &TrainData, cfg: &TrainConfig) -> Result<Self> {
        let kind = cfg.loss.kind;
        let proxies = if kind.uses_proxies() {
            let classes = data.train.clique_ids();
            Some(ProxyBank::random(classes, head.d_out(), cfg.loss.proxy_std, cfg.seed ^ 0x7072_6f78)?)
        } else {
            None
        };
        let centroids = if kind == LossKind::ClusterMatching {
            let teacher = data.teacher.ok_or_else(|| config_err("cluster matching needs teacher embeddings"))?;
            let set = data.train.with_vectors(teacher.clone())?;
            Some(CentroidBank::from_teacher(&set, head.d_out(), cfg.seed ^ 0x6365_6e74)?)
        } else {
            None
        };
        Ok(Self { proxies, centroids })
    }

    fn lens(&self, head: &ProjectionHead) -> Vec<usize> {
        let mut lens = vec![head.weight.as_slice().len(), head.bias.len(), head.d_out(), head.d_out()];
        if let Some(p) = &self.proxies {
            lens.push(p.proxies.as_slice().len());
        }
        if let Some(c) = &self.centroids {
            lens.push(c.weight.as_slice().len());
            lens.push(c.bias.len());
        }
        lens
    }
}

fn check_data(data: &TrainData, head: &ProjectionHead, cfg: &TrainConfig) -> Result<()> {
    for (name, set) in [("training", data.train), ("validation", data.val)] {
        if set.dim() != head.d_in() {
            return Err(dim_err(format!(
                "{name} features have {} dims, head expects {}",
                set.dim(),
                head.d_in()
            )));
        }
    }
    if cfg.loss.kind.is_distillation() {
        let t = data
            .teacher
            .ok_or_else(|| config_err(format!("{} needs teacher embeddings", cfg.loss.kind)))?;
        if t.rows() != data.train.len() {
            return Err(dim_err(format!(
                "{} teacher rows for {} training items",
                t.rows(),
                data.train.len()
            )));
        }
    }
    Ok(())
}

fn diverged(epoch: usize, batch: usize, lr: f64, loss: f64, last: Option<f64>) -> Error {
    Error::Diverged(Box::new(DivergenceReport {
        epoch,
        batch,
        lr,
        loss,
        last_finite_loss: last,
    }))
}

/// Runs the configured schedule from `head` and returns the checkpoint with
/// the highest validation MAP (earliest epoch on ties). With zero epochs the
/// untrained head is evaluated and returned.
///
/// Deterministic for a given seed: batch sampling, proxy and projection
/// initialization all derive from `cfg.seed`.
pub fn train(head: ProjectionHead, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(data, &head, cfg)?;
    let mut head = head;
    let mut banks = Banks::init(&head, data, cfg)?;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.momentum, &banks.lens(&head));
    let labels: Vec<Option<CliqueId>> = data.train.labels();

    let validate = |head: &ProjectionHead| -> Result<(f64, f64)> {
        let report = evaluate(&embed(head, data.val)?, cfg.metric)?;
        Ok((report.map, report.mr1))
    };
    let snapshot = |head: &ProjectionHead, banks: &Banks, opt: &OptimizerState, epoch: usize, map: f64, mr1: f64| Checkpoint {
        head: head.clone(),
        proxies: banks.proxies.clone(),
        centroids: banks.centroids.clone(),
        optimizer: opt.clone(),
        epoch,
        val_map: map,
        val_mr1: mr1,
        config: cfg.clone(),
    };

    let mut diagnostics = LossDiagnostics::default();
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        let (map, mr1) = validate(&head)?;
        let best = snapshot(&head, &banks, &opt, 0, map, mr1);
        return Ok(TrainOutcome {
            last: best.clone(),
            best,
            history,
            diagnostics,
        });
    }

    let sampler = BatchSampler::new(data.train, cfg.batch_spec())?;
    let batches = cfg.batches_per_epoch.unwrap_or_else(|| sampler.batches_per_epoch());
    let mut best: Option<Checkpoint> = None;
    let mut last_finite = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut loss_sum = 0.0;
        for b in 0..batches {
            let rows = sampler.sample(EpochState {
                epoch: epoch as u64,
                batch: b as u64,
            });
            let batch_labels: Vec<CliqueId> = rows
                .iter()
                .map(|&r| labels[r].expect("sampler draws labeled rows"))
                .collect();
            let x = data.train.vectors().select_rows(&rows);
            let teacher = data.teacher.map(|t| t.select_rows(&rows));

            let step = (|| -> Result<f64> {
                let (emb, cache) = head.forward_train(&x)?;
                let out = loss_for_batch(
                    &cfg.loss,
                    &emb,
                    &batch_labels,
                    teacher.as_ref(),
                    banks.proxies.as_ref(),
                    banks.centroids.as_ref(),
                )?;
                if !out.value.is_finite() {
                    return Ok(out.value);
                }
                let grads = head.backward(&out.embeddings, &cache)?;
                let mut slot = 0;
                for (p, g) in head.params_mut().into_iter().zip(grads.slices()) {
                    opt.step(slot, p, g, lr);
                    slot += 1;
                }
                if let (Some(bank), Some(g)) = (banks.proxies.as_mut(), out.proxies.as_ref()) {
                    opt.step(slot, bank.proxies.as_mut_slice(), g.as_slice(), lr);
                    slot += 1;
                }
                if let (Some(bank), Some(g)) = (banks.centroids.as_mut(), out.projection.as_ref()) {
                    opt.step(slot, bank.weight.as_mut_slice(), g.weight.as_slice(), lr);
                    opt.step(slot + 1, &mut bank.bias, &g.bias, lr);
                }
                diagnostics += out.diagnostics;
                Ok(out.value)
            })();
            let value = match step {
                Ok(v) if v.is_finite() => v,
                Ok(v) => return Err(diverged(epoch, b, lr, v, last_finite)),
                Err(Error::NonFinite { .. }) => return Err(diverged(epoch, b, lr, f64::NAN, last_finite)),
                Err(e) => return Err(e),
            };
            last_finite = Some(value);
            loss_sum += value;
        }
        let (map, mr1) = match validate(&head) {
            Err(Error::NonFinite { .. }) => return Err(diverged(epoch, batches, lr, f64::NAN, last_finite)),
            other => other?,
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / batches as f64,
            val_map: map,
            val_mr1: mr1,
        });
        if best.as_ref().is_none_or(|c| map > c.val_map) {
            best = Some(snapshot(&head, &banks, &opt, epoch + 1, map, mr1));
        }
    }
    let last = history.last().expect("at least one epoch ran");
    let last = snapshot(&head, &banks, &opt, cfg.epochs, last.val_map, last.val_mr1);
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        last,
        history,
        diagnostics,
    })
}

/// Result of fitting a fresh head: the selected checkpoint, its history and
/// the validation split embedded by it.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub outcome: TrainOutcome,
    pub embeddings: EmbeddingSet,
}

fn fit_fresh(data: &TrainData, d_out: usize, cfg: &TrainConfig) -> Result<Fitted> {
    let head = ProjectionHead::new(data.train.dim(), d_out, HeadInit::KaimingUniform { seed: cfg.seed })?;
    let outcome = train(head, data, cfg)?;
    let embeddings = embed(&outcome.best.head, data.val)?;
    Ok(Fitted { outcome, embeddings })
}

/// Learns a new `d_out`-dimensional space on top of fixed features with a
/// metric-learning loss and a randomly initialized head.
pub fn reconfigure(data: &TrainData, d_out: usize, cfg: &TrainConfig) -> Result<Fitted> {
    if cfg.loss.kind.is_distillation() {
        return Err(config_err(format!("{} is a distillation loss; use distill", cfg.loss.kind)));
    }
    fit_fresh(data, d_out, cfg)
}

/// Trains a `d_out`-dimensional student against the teacher embeddings in
/// `data` with a distillation loss.
pub fn distill(data: &TrainData, d_out: usize, cfg: &TrainConfig) -> Result<Fitted> {
    if !cfg.loss.kind.is_distillation() {
        return Err(config_err(format!("{} is not a distillation loss", cfg.loss.kind)));
    }
    fit_fresh(data, d_out, cfg)
}
