//! Meta-trained low-dimensional computing (LDC) classifiers.
//!
//! An LDC classifier encodes each feature value through a small `ValueBox`
//! network into a bipolar value vector, binds it with a learned bipolar
//! feature vector, bundles the bound vectors with a sign, and scores the
//! result against bipolar class vectors. After training the real-valued
//! parts bake away into lookup tables, leaving a fully binary datapath.
//!
//! The crate provides:
//!
//! - [`ldc`]: the model, its binary inference path and the `LDC1` file format.
//! - [`losses`]: multiclass hinge loss, its closed-form class-layer gradient
//!   and straight-through backpropagation through the whole stack.
//! - [`meta`]: interleaved inner/outer meta-training plus a plain supervised
//!   trainer used as the pretrained baseline.
//! - [`adapt`]: frozen-representation adaptation of the class layer.
//! - [`hdc`]: a hyperdimensional baseline with retraining.
//! - [`data`]: MNIST/ISOLET loaders, rotations, task pools and episodes.
//! - [`fault`]: random bit-error injection into deployed binary models.
//! - [`experiment`]: the train/adapt/evaluate protocol shared by the CLI.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); training runs in
//! `f32` and gradient checks run in `f64`.

pub mod adapt;
pub mod bipolar;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fault;
pub mod hdc;
pub mod ldc;
pub mod losses;
pub mod meta;
pub mod numerics;

pub use bipolar::BipolarVector;
pub use error::{Error, Result};
pub use numerics::{RealMatrix, Scalar};

/// Real matrix used by the training path.
pub type Matrix = numerics::RealMatrix<f32>;
/// Double-precision matrix used by gradient oracles.
pub type Matrix64 = numerics::RealMatrix<f64>;
/// Single-precision LDC model, the type every training entry point produces.
pub type Model = ldc::LdcModel<f32>;
/// Double-precision LDC model.
pub type Model64 = ldc::LdcModel<f64>;
/// Single-precision adaptation result.
pub type Adapted = adapt::AdaptResult<f32>;
