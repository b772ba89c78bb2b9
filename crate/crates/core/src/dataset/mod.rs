//! Labeled embedding sets, their on-disk format, synthetic clique-structured
//! data, and P×K mini-batch sampling.

mod batch;
mod manifest;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{dim_err, Error, Result};
use crate::tensor::Matrix;

pub use batch::{sample_batch, BatchSampler, BatchSpec, EpochState};
pub use manifest::Manifest;
pub use synth::{generate_synthetic, random_features, SynthConfig};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMBD";

/// Identifier of a clique (the set of versions of one work).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CliqueId(pub u32);

impl fmt::Display for CliqueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    /// `None` marks a noise item: a retrieval candidate that is never queried.
    pub clique: Option<CliqueId>,
}

impl Item {
    pub fn new(id: impl Into<String>, clique: Option<u32>) -> Self {
        Self {
            id: id.into(),
            clique: clique.map(CliqueId),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingTrailer {
    items: Vec<Item>,
}

/// An n×d matrix of embeddings with one [`Item`] per row. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    items: Vec<Item>,
    vectors: Matrix,
}

impl EmbeddingSet {
    pub fn new(items: Vec<Item>, vectors: Matrix) -> Result<Self> {
        if items.len() != vectors.rows() {
            return Err(dim_err(format!(
                "{} items for {} vectors",
                items.len(),
                vectors.rows()
            )));
        }
        if let Some(dup) = first_duplicate(&items) {
            return Err(Error::Config(format!("duplicate item id {dup:?}")));
        }
        Ok(Self { items, vectors })
    }

    /// Same items, different vectors (e.g. after a reduction).
    pub fn with_vectors(&self, vectors: Matrix) -> Result<Self> {
        if vectors.rows() != self.len() {
            return Err(dim_err(format!(
                "{} vectors for {} items",
                vectors.rows(),
                self.len()
            )));
        }
        Ok(Self {
            items: self.items.clone(),
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn labels(&self) -> Vec<Option<CliqueId>> {
        self.items.iter().map(|i| i.clique).collect()
    }

    /// Row indices of every labeled clique, keyed in ascending clique order.
    pub fn clique_members(&self) -> BTreeMap<CliqueId, Vec<usize>> {
        let mut out: BTreeMap<CliqueId, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            if let Some(c) = item.clique {
                out.entry(c).or_default().push(i);
            }
        }
        out
    }

    pub fn clique_ids(&self) -> Vec<CliqueId> {
        self.clique_members().into_keys().collect()
    }

    /// Keeps the listed rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let items = rows.iter().map(|&r| self.items[r].clone()).collect();
        Self::new(items, self.vectors.select_rows(rows))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let trailer = EmbeddingTrailer {
            items: self.items.clone(),
        };
        container::encode(
            EMBEDDING_MAGIC,
            self.vectors.rows(),
            self.vectors.cols(),
            self.vectors.as_slice(),
            &trailer,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = container::decode(EMBEDDING_MAGIC, bytes)?;
        let trailer: EmbeddingTrailer = c.trailer_as()?;
        if trailer.items.len() != c.rows {
            return Err(Error::Format {
                offset: c.trailer_offset,
                message: format!("{} items listed for {} vectors", trailer.items.len(), c.rows),
            });
        }
        if let Some(dup) = first_duplicate(&trailer.items) {
            return Err(Error::Format {
                offset: c.trailer_offset,
                message: format!("duplicate item id {dup:?}"),
            });
        }
        let vectors = Matrix::from_vec(c.rows, c.cols, c.payload)?;
        Ok(Self {
            items: trailer.items,
            vectors,
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

fn first_duplicate(items: &[Item]) -> Option<&str> {
    let mut seen = HashSet::with_capacity(items.len());
    items
        .iter()
        .find(|i| !seen.insert(i.id.as_str()))
        .map(|i| i.id.as_str())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    EmbeddingSet::load(path)
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    set.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> EmbeddingSet {
        let items = (0..10)
            .map(|i| Item::new(format!("s{i}"), (i % 4 != 3).then_some(i as u32 % 3)))
            .collect();
        let data = (0..80).map(|i| (i as f32 * 0.37).sin()).collect();
        EmbeddingSet::new(items, Matrix::from_vec(10, 8, data).unwrap()).unwrap()
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.embd");
        let set = sample_set();
        save_embeddings(&set, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), set);
    }

    #[test]
    fn wrong_magic_and_duplicates() {
        let mut bytes = sample_set().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            EmbeddingSet::from_bytes(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));

        let items = vec![Item::new("a", Some(1)), Item::new("a", Some(2))];
        let bytes = container::encode(
            EMBEDDING_MAGIC,
            2,
            1,
            &[0.0, 1.0],
            &EmbeddingTrailer { items },
        )
        .unwrap();
        assert!(matches!(
            EmbeddingSet::from_bytes(&bytes),
            Err(Error::Format { offset: 24, .. })
        ));
    }

    #[test]
    fn empty_set_round_trips() {
        let set = EmbeddingSet::new(vec![], Matrix::zeros(0, 16)).unwrap();
        let back = EmbeddingSet::from_bytes(&set.to_bytes().unwrap()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 16);
    }

    #[test]
    fn noise_items_are_not_cliques() {
        let set = sample_set();
        let members = set.clique_members();
        let labeled: usize = members.values().map(Vec::len).sum();
        assert_eq!(labeled, set.items().iter().filter(|i| i.clique.is_some()).count());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_exactly(
            n in 0usize..12,
            d in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n * d).map(|_| rng.random::<f32>() * 1e3 - 5e2).collect();
            let items = (0..n)
                .map(|i| Item::new(format!("id-{i}"), rng.random_bool(0.7).then(|| rng.random_range(0..4))))
                .collect();
            let set = EmbeddingSet::new(items, Matrix::from_vec(n, d, data).unwrap()).unwrap();
            let back = EmbeddingSet::from_bytes(&set.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.vectors().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            set.vectors().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, set);
        }
    }
}
