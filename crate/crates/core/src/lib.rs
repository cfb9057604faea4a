//! Surrogate modelling of dynamic responses with dependent inputs: a
//! transport map sends the inputs to an independent Gaussian latent space
//! where a Hermite polynomial chaos expansion is fitted.

pub mod basis;
pub mod datagen;
pub mod dynsim;
pub mod error;
pub mod flow;
pub mod fsutil;
pub mod hexfloat;
pub mod metrics;
pub mod nataf;
pub mod pipeline;
pub mod quadrature;
pub mod regression;
pub mod special;
pub mod transport;

pub use error::{Error, Result};
