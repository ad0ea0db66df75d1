//! Minimal `f32` tensors with reverse-mode differentiation.

mod array;
mod graph;
mod kernels;
pub mod layers;
mod optim;
mod params;

pub use array::Tensor;
pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub use optim::SgdMomentum;
pub(crate) use params::{he_uniform, lecun_uniform};
pub use params::{Param, ParamId, ParamStore};

#[cfg(test)]
mod tests;
