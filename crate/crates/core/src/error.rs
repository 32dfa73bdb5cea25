use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate surface frame at (s, t) = ({s}, {t})")]
    DegenerateGeometry { s: f64, t: f64 },

    #[error("degenerate surface frame on element {element} at (s, t) = ({s}, {t})")]
    DegenerateElement { element: usize, s: f64, t: f64 },

    #[error("ambiguous geometry: {0}")]
    AmbiguousGeometry(String),

    #[error("topology error between patches {patch_a} and {patch_b}: {detail}")]
    Topology {
        patch_a: usize,
        patch_b: usize,
        detail: String,
    },

    #[error("kernel evaluated at |r| = {0:e}")]
    SingularEvaluation(f64),

    #[error("matrix is numerically singular at pivot {pivot}")]
    SingularMatrix { pivot: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("scene error: {0}")]
    Scene(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
