use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lambda = {lambda} is numerically in the spectrum (smallest singular value {sigma_min:.3e})")]
    InSpectrum { lambda: Complex64, sigma_min: f64 },
    #[error("eigenvalue {eigenvalue} lies outside the region enclosed by the contour")]
    ContourSpectrum { eigenvalue: Complex64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
