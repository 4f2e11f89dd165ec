//! A compact reverse-mode automatic differentiation engine for NCHW image
//! networks.
//!
//! Values live in a [`Graph`] that records one backward closure per
//! operation; [`Graph::backward`] walks the record in reverse creation order.
//! Everything is single-threaded and bit-deterministic for a fixed input.

mod conv;
mod graph;
mod ops;
mod scalar;
mod tensor;

pub use conv::PadMode;
pub use graph::{Gradients, Graph, Var};
pub use ops::bilinear_taps;
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
