use thiserror::Error;

/// Errors reported by grid construction, attention kernels, losses and file IO.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size: nlat={nlat}, nlon={nlon} ({reason})")]
    InvalidGridSize {
        nlat: usize,
        nlon: usize,
        reason: &'static str,
    },

    #[error("Newton iteration for Legendre root {index} of degree {degree} did not converge")]
    NewtonNonConvergence { degree: usize, index: usize },

    #[error("invalid harmonic index: l={l}, m={m}")]
    InvalidHarmonicIndex { l: usize, m: i64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("negative quadrature weight {weight} at latitude row {row}")]
    NegativeWeight { row: usize, weight: f64 },

    #[error("invalid cutoff angle {0} (must lie in (0, pi])")]
    InvalidCutoff(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("malformed {format} file: {reason}")]
    Malformed { format: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
