//! Distill high-dimensional embeddings into compact ones and measure what the
//! compression costs in retrieval quality and buys in retrieval time.

pub mod container;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod pruning;
pub mod reduction;
pub mod retrieval;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use dataset::{CliqueId, EmbeddingSet, Item};
pub use tensor::Matrix;
