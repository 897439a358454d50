//! Core runtime for the USEANet ultrasound segmentation network: dense
//! tensor kernels, a reverse-mode differentiation tape, the encoder and
//! decoder blocks, losses/metrics, checkpoint and image I/O, a
//! parameter/FLOP profiler, and the self-verification suites.

pub mod blocks;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod oracle;
pub mod ops;
pub mod parallel;
pub mod params;
pub mod profile;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
