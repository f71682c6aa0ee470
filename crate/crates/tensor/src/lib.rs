//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! All math is generic over [`Scalar`] (`f32` or `f64`).

mod backward;
mod broadcast;
pub mod checkpoint;
#[cfg(feature = "gradcheck")]
pub mod gradcheck;
mod error;
mod graph;
pub mod optim;
mod params;
mod scalar;
mod tensor;

pub use backward::Gradients;
pub use error::{Result, TensorError};
pub use graph::{lstm_cell_step, Graph, Var};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use params::{Init, InitScheme, ParamId, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
