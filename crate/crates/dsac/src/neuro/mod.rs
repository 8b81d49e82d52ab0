//! Reverse-mode autodiff substrate: tensors, the op tape, and Adam.
//!
//! Deliberately small — just enough machinery to express quantile critics,
//! squashed Gaussian policies, and their objectives, with gradients validated
//! against central finite differences in the module tests.

pub mod adam;
pub mod tape;
pub mod tensor;

pub use adam::{AdamState, Param, ParamVec};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
