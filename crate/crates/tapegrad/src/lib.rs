//! Tape-based reverse-mode automatic differentiation over dense f64
//! tensors, sized for small visuomotor networks: direct-loop convolution,
//! spatial softmax, similarity channels against anchor embeddings, the
//! usual elementwise and reduction ops, and an Adam optimizer.
//!
//! The design trades generality for auditability: ops are methods on an
//! explicit [`Tape`], every recorded node stores its forward value, and
//! [`Tape::backward`] is a single reverse sweep over the node list.

pub mod adam;
pub mod error;
pub mod kernels;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{Error, Result};
pub use tape::{Gradients, SimAnchors, SimKind, Tape, DEGENERATE_NORM};
pub use tensor::Tensor;
