//! Dense tensors, a reverse-mode gradient tape and the Adam optimizer.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`
//! through the [`Scalar`] abstraction.

mod adam;
mod graph;
mod kernels;
mod params;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, Mode, Var};
pub use params::{init_truncated_normal, Param, ParamGroup, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
