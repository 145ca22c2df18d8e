//! Dense tensors, reverse-mode gradients, FFT, and gradient checking.

pub mod fft;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod tensor;

pub use fft::{fft, ifft, Spectrum};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{CustomOp, Gradients, Graph, Var};
pub use ops::{layer_norm, softmax};
pub use tensor::Tensor;
