//! Numerical models of a delay-buffered, wavelength-multiplexed photonic
//! convolution accelerator.
//!
//! The crate is organised bottom-up:
//!
//! - [`conv_math`]: index algebra showing that serialising an image and
//!   imposing fixed tap delays yields the im2col matrix, so a convolution
//!   becomes a single matrix product.
//! - [`optics`]: passive component models (delay bank, detection noise,
//!   waveguide nonlinearity, link loss).
//! - [`photonic`]: analog forward model of one convolutional layer with
//!   additive detection noise, per-path imbalance and digital calibration.
//! - [`nn`]: a small MNIST CNN trained digitally and executed with its
//!   convolutions on the photonic model.
//! - [`design_space`]: closed-form scale, speed and power budgets.

pub mod conv_math;
pub mod design_space;
pub mod equivalence;
pub mod error;
pub mod nn;
pub mod optics;
pub mod photonic;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
