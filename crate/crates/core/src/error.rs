use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NRRD header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NRRD content: {0}")]
    Unsupported(String),
    #[error("data length mismatch: expected {expected} bytes, found {found}")]
    DataLength { expected: usize, found: usize },
    #[error("mask value {value} at index {index} is not 0 or 1")]
    MaskValue { index: usize, value: u8 },
    #[error("expected a {expected} volume, got {found}")]
    DType {
        expected: &'static str,
        found: &'static str,
    },
    #[error("volume shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),
    #[error("implausible connector geometry: target at frame x = {x_hat:.4} below gate {x_min:.4}")]
    ImplausibleGeometry { x_hat: f64, x_min: f64 },
    #[error("curve endpoints differ by {0:.3e} mm")]
    EndpointMismatch(f64),
    #[error("geodesic descent stagnated after {steps} steps")]
    Stagnation { steps: usize, partial: Vec<[f64; 3]> },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
