//! Joint semantic and motion instance segmentation.
//!
//! A shared two-stream trunk (appearance plus optical flow or a second
//! frame) feeds a feature pyramid and one set of prototype masks. Two heads
//! predict boxes, classes and mask coefficients: one over semantic
//! categories, one over static/moving. Instance masks are linear
//! combinations of the shared prototypes.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases [`Model32`] and [`Model64`] name the two instantiations.

pub mod annotation;
pub mod assembly;
pub mod config;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod heads;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use model::{HeadKind, Model};
pub use params::{Gradients, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
