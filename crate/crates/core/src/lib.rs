//! Point-cloud classification with dilated and annular graph convolutions,
//! densely connected multi-dilation fusion, multi-level decoders and a
//! multi-resolution supervision loss.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training
//! runs in `f32`; the `*64` aliases exist for reference computations such as
//! finite-difference gradient checks.

pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor, Var};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
