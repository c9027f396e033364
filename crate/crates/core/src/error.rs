use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("singular values too close for a stable SVD gradient (gap {gap:e})")]
    SvdDegenerate { gap: f64 },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("degenerate point configuration (singular value ratio {ratio:e})")]
    DegenerateConfiguration { ratio: f64 },

    #[error("no points within radius {radius} of the query center")]
    EmptyBall { radius: f64 },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },

    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },

    #[error("RANSAC found no consensus (best inlier count {best})")]
    NoConsensus { best: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad checkpoint: {0}")]
    Format(String),

    #[error("checkpoint shape error: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too many skipped training pairs: {skipped} of {total}")]
    TooManySkips { skipped: usize, total: usize },
}

impl Error {
    /// Stable class name, used as the tag of `ERROR:` lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::SvdDegenerate { .. } => "SvdDegenerate",
            Error::NonScalarLoss(_) => "NonScalarLoss",
            Error::DegenerateConfiguration { .. } => "DegenerateConfiguration",
            Error::EmptyBall { .. } => "EmptyBall",
            Error::EmptyCloud => "EmptyCloud",
            Error::NonFinite { .. } => "NonFinite",
            Error::InsufficientCorrespondences { .. } => "InsufficientCorrespondences",
            Error::NoConsensus { .. } => "NoConsensus",
            Error::Io { .. } => "IoError",
            Error::Parse { .. } => "ParseError",
            Error::Format(_) => "FormatError",
            Error::Shape(_) => "ShapeError",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::TooManySkips { .. } => "TooManySkips",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
