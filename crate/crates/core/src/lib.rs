//! Fourier token embeddings refined by a residual GeGLU head, a small
//! rotary transformer encoder built on a tape-based autograd, contrastive
//! training, similarity evaluation and an embedding microbenchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod fourier;
pub mod ids;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use ids::{TokenGrid, TokenId};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
