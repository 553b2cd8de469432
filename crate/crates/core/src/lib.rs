//! Landmark regression with VGG-style CNNs, label-consistent augmentation,
//! batch I/O, evaluation and two-view triangulation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix it to `f64`, which is what the tools use.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod multiview;
pub mod nn;
pub mod scalar;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::{Shape4, Tensor4};

pub type Tensor = Tensor4<f64>;
pub type Params = nn::Parameters<f64>;
pub type Archive = nn::WeightArchive<f64>;
pub type TrainBatch = nn::Batch<f64>;
