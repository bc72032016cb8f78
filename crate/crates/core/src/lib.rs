//! CNN steganalysis for grayscale spatial-domain images.
//!
//! The network starts from 30 SRM high-pass residuals (trainable), mixes them
//! with two separable-convolution blocks, extracts features with four basic
//! blocks and maps any admissible input size to a fixed-length vector with
//! spatial pyramid pooling before a two-layer classifier.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod nnops;
pub mod srm;
pub mod tensor;
pub mod train;
pub mod zhunet;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
