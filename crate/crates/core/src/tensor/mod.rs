//! Dense matrices, the distance functions, and the linear and batch-norm
//! kernels with hand-derived backward passes.

mod batchnorm;
mod distance;
mod linear;
mod matrix;

pub use batchnorm::{BatchNorm, BatchNormCache, BatchNormGrads, Mode, DEFAULT_EPS, DEFAULT_MOMENTUM};
pub use distance::{cosine_sim, pearson_sim, squared_dist};
pub(crate) use distance::squared_dist_raw;
pub use linear::{linear_backward, linear_forward, LinearCache, LinearGrads};
pub use matrix::Matrix;
pub(crate) use matrix::dot;
