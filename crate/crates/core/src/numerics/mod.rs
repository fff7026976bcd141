//! Dense tensors, reverse-mode gradients, batch normalization and Adam.

pub mod batchnorm;
pub mod gradcheck;
pub mod ops;
pub mod store;
pub mod tape;
pub mod tensor;

pub use batchnorm::{BatchNormState, BnMode};
pub use ops::{Norm, Pooling};
pub use store::{Adam, Gradients, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
