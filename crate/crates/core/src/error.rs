use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("solution blew up at t = {time} (norm {norm:e})")]
    BlowUp { time: f64, norm: f64 },

    #[error("contour radius {delta} reaches the second eigenvalue: |xi + 1| = delta encloses lambda_2 = {lambda2} (need delta < {limit})")]
    ContourTooLarge {
        delta: f64,
        lambda2: f64,
        limit: f64,
    },

    #[error("pure Neumann problem is not solvable for data with nonzero mean {mean:?}")]
    NonzeroMean { mean: Vec<f64> },

    #[error("no equilibria found in the search box")]
    NoEquilibria,

    #[error("equilibrium at {location:?} is not hyperbolic (min |Re lambda| = {min_real_part:e})")]
    Nonhyperbolic {
        location: Vec<f64>,
        min_real_part: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("orbit left the absorbing box at t = {time} (|v| = {norm})")]
    EscapedAbsorbingBox { time: f64, norm: f64 },

    #[error("graph map is not contracting: factor {factor} at iteration {iteration}")]
    NonContraction { iteration: usize, factor: f64 },

    #[error("empty attractor cloud")]
    EmptyCloud,

    #[error("fit refused: {surviving} usable points, at least {required} required")]
    InsufficientPoints { surviving: usize, required: usize },

    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
