//! Deconvolution contrast estimation for a CIR stochastic-volatility model
//! observed through log-chi-squared noise, with sandwich confidence intervals,
//! filtering baselines and a Monte-Carlo study harness.

pub mod error;
pub mod inference;
pub mod baselines;
pub mod bench;
pub mod contrast;
pub mod model;
pub mod optimize;
pub mod quad;
pub mod special;

pub use error::{Error, Result};
pub use model::{ModelConfig, NoiseSpec, ThetaCir, Trajectory};
