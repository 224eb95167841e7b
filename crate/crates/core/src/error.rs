use std::fmt;

use thiserror::Error;

/// Which color representation a [`crate::PixelPatch`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Space {
    /// Linear-light reflectance in `[floor, 1]`.
    Linear,
    /// Per-channel `-ln(R)`.
    LogAbsorption,
    /// Relative concentrations, channels ordered (H, M, r).
    Chromophore,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Space::Linear => "linear",
            Space::LogAbsorption => "log-absorption",
            Space::Chromophore => "chromophore",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a {expected} patch, got {found}")]
    SpaceMismatch { expected: Space, found: Space },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("region {roi} is invalid for a {width}x{height} image: {reason}")]
    InvalidRoi {
        roi: crate::Roi,
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("degenerate samples: {0}")]
    DegenerateSamples(String),

    #[error("ICA did not converge after {iterations} iterations")]
    Convergence { iterations: usize },

    #[error("rank-deficient geometry: {0}")]
    Rank(String),

    #[error("image decode/encode failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
