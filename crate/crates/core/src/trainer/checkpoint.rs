use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::head::ProjectionHead;
use super::optim::OptimizerState;
use crate::container;
use crate::error::{Error, Result};
use crate::losses::{CentroidBank, ProxyBank};
use crate::tensor::{BatchNorm, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";

/// Full trainable state after one epoch, with the score that selected it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub head: ProjectionHead,
    pub proxies: Option<ProxyBank>,
    pub centroids: Option<CentroidBank>,
    pub optimizer: OptimizerState,
    /// Completed epochs; 0 is the untrained head.
    pub epoch: usize,
    pub val_map: f64,
    pub val_mr1: f64,
    pub config: TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    bias: Vec<f32>,
    bn: BatchNorm,
    proxies: Option<ProxyBank>,
    centroids: Option<CentroidBank>,
    optimizer: OptimizerState,
    epoch: usize,
    val_map: f64,
    val_mr1: f64,
    config: TrainConfig,
}

impl Checkpoint {
    /// Head weights as the payload, everything else in the trailer.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let trailer = Trailer {
            bias: self.head.bias.clone(),
            bn: self.head.bn.clone(),
            proxies: self.proxies.clone(),
            centroids: self.centroids.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            val_map: self.val_map,
            val_mr1: self.val_mr1,
            config: self.config.clone(),
        };
        let w = &self.head.weight;
        container::encode(CHECKPOINT_MAGIC, w.rows(), w.cols(), w.as_slice(), &trailer)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = container::decode(CHECKPOINT_MAGIC, bytes)?;
        let t: Trailer = c.trailer_as()?;
        let bad = |message: String| Error::Format {
            offset: c.trailer_offset,
            message,
        };
        if t.bias.len() != c.rows || t.bn.features() != c.rows {
            return Err(bad(format!(
                "{} biases and {} normalized features for {} outputs",
                t.bias.len(),
                t.bn.features(),
                c.rows
            )));
        }
        let mut proxies = t.proxies;
        if let Some(p) = proxies.as_mut() {
            p.rebuild_index().map_err(|e| bad(e.to_string()))?;
        }
        let mut centroids = t.centroids;
        if let Some(cb) = centroids.as_mut() {
            cb.rebuild_index().map_err(|e| bad(e.to_string()))?;
        }
        let weight = Matrix::from_vec(c.rows, c.cols, c.payload)?;
        Ok(Self {
            head: ProjectionHead {
                weight,
                bias: t.bias,
                bn: t.bn,
            },
            proxies,
            centroids,
            optimizer: t.optimizer,
            epoch: t.epoch,
            val_map: t.val_map,
            val_mr1: t.val_mr1,
            config: t.config,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
