use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CliqueId, EmbeddingSet};
use crate::error::{config_err, Error, Result};

/// P classes × K samples per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            classes_per_batch: 16,
            samples_per_class: 4,
            seed: 0,
        }
    }
}

impl BatchSpec {
    pub fn new(classes_per_batch: usize, samples_per_class: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            classes_per_batch,
            samples_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes_per_batch < 2 || self.samples_per_class < 2 {
            return Err(config_err(format!(
                "batch needs P >= 2 and K >= 2, got P={} K={}",
                self.classes_per_batch, self.samples_per_class
            )));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.classes_per_batch * self.samples_per_class
    }
}

/// Position of a batch in the training schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct EpochState {
    pub epoch: u64,
    pub batch: u64,
}

/// Pre-indexed sampler over the labeled cliques of a set. Noise items are
/// never drawn.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    spec: BatchSpec,
    cliques: Vec<(CliqueId, Vec<usize>)>,
    batches_per_epoch: usize,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl BatchSampler {
    pub fn new(set: &EmbeddingSet, spec: BatchSpec) -> Result<Self> {
        spec.validate()?;
        let cliques: Vec<_> = set
            .clique_members()
            .into_iter()
            .filter(|(_, rows)| rows.len() >= 2)
            .collect();
        if cliques.len() < spec.classes_per_batch {
            return Err(Error::Sampling(format!(
                "{} cliques with at least 2 members, batch needs {}",
                cliques.len(),
                spec.classes_per_batch
            )));
        }
        let labeled: usize = cliques.iter().map(|(_, r)| r.len()).sum();
        let batches_per_epoch = labeled.div_ceil(spec.batch_size()).max(1);
        Ok(Self {
            spec,
            cliques,
            batches_per_epoch,
        })
    }

    pub fn spec(&self) -> &BatchSpec {
        &self.spec
    }

    /// Enough batches to visit roughly every labeled item once.
    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    pub fn eligible_cliques(&self) -> impl Iterator<Item = CliqueId> + '_ {
        self.cliques.iter().map(|(c, _)| *c)
    }

    /// Row indices laid out class-major: K rows of the first class, then K of
    /// the second, and so on.
    pub fn sample(&self, state: EpochState) -> Vec<usize> {
        let seed = mix(self.spec.seed ^ mix(state.epoch.wrapping_add(0x9e37_79b9_7f4a_7c15)) ^ mix(!state.batch));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.spec.samples_per_class;
        let picked = index::sample(&mut rng, self.cliques.len(), self.spec.classes_per_batch);
        let mut out = Vec::with_capacity(self.spec.batch_size());
        for c in picked.iter() {
            let rows = &self.cliques[c].1;
            if rows.len() >= k {
                out.extend(index::sample(&mut rng, rows.len(), k).iter().map(|i| rows[i]));
            } else {
                out.extend_from_slice(rows);
                for _ in rows.len()..k {
                    out.push(rows[rng.random_range(0..rows.len())]);
                }
            }
        }
        out
    }
}

pub fn sample_batch(set: &EmbeddingSet, spec: BatchSpec, state: EpochState) -> Result<Vec<usize>> {
    Ok(BatchSampler::new(set, spec)?.sample(state))
}
