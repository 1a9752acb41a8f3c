//! Dense CPU tensors with a tape-based reverse-mode differentiation graph.
//!
//! The layer set is deliberately narrow: stride-1 dilated convolution,
//! 2x2 max pooling, windowed average pooling, nearest-neighbour upsampling,
//! ELU, channel softmax, channel concatenation, gradient gating and
//! depth-wise multiplicative Gaussian noise. Everything a multimodal
//! encoder-decoder segmentation network needs, nothing more.
//!
//! Tensors are rank-4 `(batch, channels, height, width)` planar arrays in
//! most of the API; lower ranks are allowed for parameters and scalars.

mod element;
mod error;
mod gemm;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod ops;
mod tensor;

pub use element::{DType, Float};
pub use error::{Error, Result};
pub use graph::{Edge, Gradients, Graph, NodeId, Var};
pub use ops::{dmgn_multipliers, dmgn_std, Padding};
pub use tensor::Tensor;
