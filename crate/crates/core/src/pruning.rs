//! Iterative magnitude pruning of a head's output rows with rewind.
//!
//! Each round ranks the active rows of the retrained weights by mean absolute
//! value, zeroes the weaker half and restores the survivors to their
//! iteration-0 values before the next round of training.

use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingSet;
use crate::error::{config_err, dim_err, Error, Result};
use crate::tensor::Matrix;
use crate::trainer::{embed, train, Checkpoint, ProjectionHead, TrainConfig, TrainData};

/// Active rows ordered by mean `|w|`, largest first, ties to the lower index.
pub fn rank_rows(w: &Matrix, mask: &[bool]) -> Result<Vec<usize>> {
    if mask.len() != w.rows() {
        return Err(dim_err(format!("mask of {} for {} rows", mask.len(), w.rows())));
    }
    let active: Vec<usize> = (0..w.rows()).filter(|&r| mask[r]).collect();
    if active.is_empty() {
        return Err(Error::State("no active rows to rank".into()));
    }
    let score = |r: usize| w.row(r).iter().map(|v| f64::from(v.abs())).sum::<f64>() / w.cols().max(1) as f64;
    let mut scored: Vec<(usize, f64)> = active.into_iter().map(|r| (r, score(r))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(r, _)| r).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneRecord {
    pub iteration: usize,
    pub kept_dim: usize,
    pub val_map: f64,
}

/// Rewind target and mask across pruning rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneState {
    pub w_init: Matrix,
    pub b_init: Vec<f32>,
    pub active_mask: Vec<bool>,
    pub iteration: usize,
    pub history: Vec<PruneRecord>,
}

impl PruneState {
    /// Snapshots the iteration-0 linear map of `head`.
    pub fn new(head: &ProjectionHead) -> Self {
        Self {
            w_init: head.weight.clone(),
            b_init: head.bias.clone(),
            active_mask: vec![true; head.d_out()],
            iteration: 0,
            history: Vec::new(),
        }
    }

    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.active_mask.len()).filter(|&r| self.active_mask[r]).collect()
    }

    pub fn kept_dim(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }

    /// Drops the weaker `⌈n/2⌉` of the `n` active rows of `w_live` and
    /// returns the dropped rows.
    pub fn prune_step(&mut self, w_live: &Matrix) -> Result<Vec<usize>> {
        if w_live.shape() != self.w_init.shape() {
            return Err(dim_err(format!(
                "live weights {:?}, initial weights {:?}",
                w_live.shape(),
                self.w_init.shape()
            )));
        }
        let n = self.kept_dim();
        if n < 2 {
            return Err(Error::State(format!("cannot prune {n} active row(s)")));
        }
        let order = rank_rows(w_live, &self.active_mask)?;
        let dropped: Vec<usize> = order[n / 2..].to_vec();
        for &r in &dropped {
            self.active_mask[r] = false;
        }
        self.iteration += 1;
        Ok(dropped)
    }

    /// Iteration-0 weights with the pruned rows zeroed.
    pub fn live_weights(&self) -> Matrix {
        let mut w = self.w_init.clone();
        for (r, &a) in self.active_mask.iter().enumerate() {
            if !a {
                w.row_mut(r).fill(0.0);
            }
        }
        w
    }

    pub fn live_bias(&self) -> Vec<f32> {
        self.b_init
            .iter()
            .zip(&self.active_mask)
            .map(|(&b, &a)| if a { b } else { 0.0 })
            .collect()
    }

    /// Fresh head over the surviving rows, rewound to iteration 0.
    pub fn rewound_head(&self) -> ProjectionHead {
        let rows = self.active_rows();
        ProjectionHead::from_parts(self.w_init.select_rows(&rows), rows.iter().map(|&r| self.b_init[r]).collect())
    }

    /// Scatters a compact head's weights back into a full-size matrix.
    pub fn expand(&self, compact: &ProjectionHead) -> Result<Matrix> {
        let rows = self.active_rows();
        if compact.d_out() != rows.len() || compact.d_in() != self.w_init.cols() {
            return Err(dim_err(format!(
                "compact head {}x{} for {} active rows",
                compact.d_out(),
                compact.d_in(),
                rows.len()
            )));
        }
        let mut w = Matrix::zeros(self.w_init.rows(), self.w_init.cols());
        for (k, &r) in rows.iter().enumerate() {
            w.row_mut(r).copy_from_slice(compact.weight.row(k));
        }
        Ok(w)
    }
}

/// Eval-mode forward keeping only the active outputs, compacted.
pub fn masked_embed(head: &ProjectionHead, mask: &[bool], x: &Matrix) -> Result<Matrix> {
    if mask.len() != head.d_out() {
        return Err(dim_err(format!("mask of {} for {} outputs", mask.len(), head.d_out())));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&r| mask[r]).collect();
    head.select_outputs(&rows)?.forward_eval(x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    /// Rounds after the initial training.
    pub max_iterations: usize,
    /// Stop once validation MAP falls more than this below iteration 0.
    pub max_map_drop: f64,
    /// Smallest embedding size to keep training.
    pub min_dim: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            max_iterations: 8,
            max_map_drop: 0.05,
            min_dim: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub state: PruneState,
    /// Best checkpoint of every trained iteration, iteration 0 first.
    pub checkpoints: Vec<Checkpoint>,
}

impl PruneOutcome {
    /// Validation split embedded by iteration `i`'s checkpoint.
    pub fn embeddings(&self, i: usize, val: &EmbeddingSet) -> Result<EmbeddingSet> {
        let ckpt = self
            .checkpoints
            .get(i)
            .ok_or_else(|| config_err(format!("no iteration {i}")))?;
        embed(&ckpt.head, val)
    }
}

/// Trains `head`, then alternates prune, rewind and retrain until the MAP drop
/// exceeds the limit, the iteration budget runs out or fewer than two rows
/// remain.
pub fn prune_loop(head: ProjectionHead, data: &TrainData, train_cfg: &TrainConfig, cfg: &PruneConfig) -> Result<PruneOutcome> {
    let mut state = PruneState::new(&head);
    let first = train(head, data, train_cfg)?.best;
    state.history.push(PruneRecord {
        iteration: 0,
        kept_dim: state.kept_dim(),
        val_map: first.val_map,
    });
    let base_map = first.val_map;
    let mut w_live = state.expand(&first.head)?;
    let mut checkpoints = vec![first];
    while state.iteration < cfg.max_iterations && state.kept_dim() >= 2 && state.kept_dim() / 2 >= cfg.min_dim {
        state.prune_step(&w_live)?;
        let best = train(state.rewound_head(), data, train_cfg)?.best;
        state.history.push(PruneRecord {
            iteration: state.iteration,
            kept_dim: state.kept_dim(),
            val_map: best.val_map,
        });
        w_live = state.expand(&best.head)?;
        let drop = base_map - best.val_map;
        checkpoints.push(best);
        if drop > cfg.max_map_drop {
            break;
        }
    }
    Ok(PruneOutcome { state, checkpoints })
}
