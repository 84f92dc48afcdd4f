//! Joint video/text embedding networks trained with paired losses and an
//! adversarial formulation over unpaired data, plus the evaluation
//! protocols (zero-shot classification, activity discovery, captioning).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the element type used by the CLI.

pub mod adversarial;
pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Model64 = model::MultimodalModel<f64>;
pub type Model32 = model::MultimodalModel<f32>;
pub type Discriminators64 = adversarial::DiscriminatorSet<f64>;
