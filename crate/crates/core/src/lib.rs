//! Forward-pass kernels for a hybrid selective-scan / self-attention vision
//! backbone, plus temporal confident learning for cleaning noisy video-frame
//! labels.

pub mod attention;
pub mod error;
pub mod evalmetrics;
pub mod harness;
pub mod model;
pub mod ssm;
pub mod tensor;
pub mod trcl;

pub use error::{Error, Result};
pub use tensor::Tensor;
