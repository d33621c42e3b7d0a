use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("gamma function pole at z = {0}")]
    Pole(f64),

    #[error("series too short: need at least {needed} observations, got {got}")]
    Length { needed: usize, got: usize },

    #[error("finite-difference stencil leaves the admissible region in coordinate {coord}")]
    Boundary { coord: usize },

    #[error("matrix is numerically singular (condition number {0:.3e})")]
    Singular(f64),

    #[error("negative sandwich variance {value:.3e} for coordinate {coord}")]
    NegativeVariance { coord: usize, value: f64 },

    #[error("imaginary residue {imag:.3e} too large relative to real part {real:.3e}")]
    ImaginaryResidue { real: f64, imag: f64 },

    #[error("particle weights degenerate at step {step}")]
    Degenerate { step: usize },

    #[error("filter diverged at step {step}")]
    Diverged { step: usize },

    #[error("study failed: {0}")]
    Study(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors caused by bad user input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Length { .. } | Error::Json(_) | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
