//! Two-layer ReLU networks trained by mini-batch SGD with weight decay, and
//! the tools to measure the low-rank structure that weight decay induces in
//! the first-layer matrix.
//!
//! - [`linalg`]: dense matrices, Jacobi SVD, stable rank, power iteration.
//! - [`network`]: the model `U σ(Vx + b)` with closed-form gradients.
//! - [`training`]: the regularized loss, batch gradients and the SGD loop.
//! - [`analysis`]: gradient census, rank certificates, bounds, accuracy.
//! - [`data`]: CSV/IDX loading, synthetic teacher data, splits.

pub mod analysis;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{ColVec, Mat};
pub use network::{ActivationPattern, NetGradient, TwoLayerNet};
