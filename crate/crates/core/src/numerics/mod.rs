//! Dense tensors, the unitary FFT, convolution and activation kernels,
//! finite-difference checking and the Adam update.

mod activation;
mod adam;
mod conv;
mod diffop;
mod fft;
mod gradcheck;
mod tensor;

pub use activation::{sigmoid, sigmoid_scalar, softplus, softplus_scalar, Sigmoid, Softplus};
pub use adam::{AdamParams, AdamState};
pub use conv::{conv2d, conv2d_backward_input, conv2d_backward_params, conv2d_raw, Conv2d, ConvShape};
pub use diffop::{Chain, DiffOp};
pub use fft::{fft2, ifft2};
pub use gradcheck::finite_diff_grad;
pub use tensor::{dot, ComplexTensor, Tensor};
pub use rustfft::num_complex::Complex64;
