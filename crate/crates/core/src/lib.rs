//! Order-agnostic masked-diffusion sequence generation.
//!
//! A grid of quantised symbols is generated one position (or `K` positions)
//! at a time, in an order chosen by a pluggable decoding strategy. The
//! numerics are generic over the scalar type; the model stack runs at `f64`.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod orders;
pub mod quantiser;
pub mod rng;
pub mod sampler;

pub use error::{Error, Result};
pub use numerics::{Array, ParamSet, Real, Tape};

pub type Array64 = numerics::Array<f64>;
pub type Array32 = numerics::Array<f32>;
pub type Tape64 = numerics::Tape<f64>;
pub type ParamSet64 = numerics::ParamSet<f64>;
