use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::OptimizerKind;
use super::{train, HeadInit, ProjectionHead, TrainData};
use crate::error::{config_err, Error, Result};

/// Cartesian product of optimizers and initial learning rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub optimizers: Vec<OptimizerKind>,
    pub lrs: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            optimizers: vec![OptimizerKind::SgdMomentum, OptimizerKind::Adam],
            lrs: vec![1e-4, 1e-3, 1e-2, 0.1],
        }
    }
}

impl Grid {
    pub fn single(optimizer: OptimizerKind, lr: f64) -> Self {
        Self {
            optimizers: vec![optimizer],
            lrs: vec![lr],
        }
    }

    pub fn len(&self) -> usize {
        self.optimizers.len() * self.lrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in optimizer-major order.
    pub fn cells(&self) -> impl Iterator<Item = (OptimizerKind, f64)> + '_ {
        self.optimizers
            .iter()
            .flat_map(move |&o| self.lrs.iter().map(move |&lr| (o, lr)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Best validation MAP of the run, absent when it failed.
    pub val_map: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: TrainConfig,
    pub best_map: f64,
    /// Successful cells ranked best first, then failures in grid order.
    pub leaderboard: Vec<GridCell>,
}

fn rank(a: &GridCell, b: &GridCell) -> Ordering {
    match (a.val_map, b.val_map) {
        (Some(x), Some(y)) => y
            .total_cmp(&x)
            .then(a.lr.total_cmp(&b.lr))
            .then(a.optimizer.cmp(&b.optimizer)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// Scores every cell with `objective` and picks the highest score; ties go
/// to the lower learning rate, then to SGD.
pub fn grid_search_with<F>(base: &TrainConfig, grid: &Grid, mut objective: F) -> Result<GridResult>
where
    F: FnMut(&TrainConfig) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(config_err("grid has no cells"));
    }
    let mut board = Vec::with_capacity(grid.len());
    for (optimizer, lr) in grid.cells() {
        let cfg = TrainConfig {
            optimizer,
            lr,
            ..base.clone()
        };
        let cell = match objective(&cfg) {
            Ok(map) if map.is_finite() => GridCell {
                optimizer,
                lr,
                val_map: Some(map),
                error: None,
            },
            Ok(map) => GridCell {
                optimizer,
                lr,
                val_map: None,
                error: Some(format!("objective returned {map}")),
            },
            Err(e) => GridCell {
                optimizer,
                lr,
                val_map: None,
                error: Some(e.to_string()),
            },
        };
        board.push(cell);
    }
    board.sort_by(rank);
    let Some(top) = board.first().filter(|c| c.val_map.is_some()) else {
        let failures = board
            .iter()
            .map(|c| format!("{} lr={}: {}", c.optimizer, c.lr, c.error.as_deref().unwrap_or("failed")))
            .collect();
        return Err(Error::GridExhausted(failures));
    };
    Ok(GridResult {
        best: TrainConfig {
            optimizer: top.optimizer,
            lr: top.lr,
            ..base.clone()
        },
        best_map: top.val_map.expect("filtered above"),
        leaderboard: board,
    })
}

/// Trains one fresh `d_out` head per cell and ranks by best validation MAP.
pub fn grid_search(data: &TrainData, d_out: usize, base: &TrainConfig, grid: &Grid) -> Result<GridResult> {
    grid_search_with(base, grid, |cfg| {
        let head = ProjectionHead::new(data.train.dim(), d_out, HeadInit::KaimingUniform { seed: cfg.seed })?;
        Ok(train(head, data, cfg)?.best.val_map)
    })
}
