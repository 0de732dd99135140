//! Coded-diffraction-pattern phase retrieval with learned phase masks,
//! filtered spectral initialization, a convolutional recovery network, and
//! teacher-to-student knowledge distillation.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fft;
pub(crate) mod gemm;
pub(crate) mod interp;
pub mod initializer;
pub mod metrics;
pub mod num;
pub mod objectives;
pub mod optics;
pub mod orchestration;
pub mod recovery;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
