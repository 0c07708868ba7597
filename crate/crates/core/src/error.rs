use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("payload size mismatch: header declares {expected} bytes, payload has {actual} bytes")]
    PayloadSize { expected: u64, actual: u64 },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("invalid cube: {0}")]
    InvalidCube(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate reference frames: white equals dark at every element")]
    DegenerateReference,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("circle tuning failed: expected {expected} circles, best count achieved was {best}")]
    TuningFailed { expected: usize, best: usize },

    #[error("no usable wells to extract intensity from")]
    NoUsableWells,

    #[error(
        "non-monotone time for sample {sample}: new t = {new} h is not after last t = {last} h"
    )]
    NonMonotoneTime { sample: usize, last: f64, new: f64 },

    #[error("insufficient replicates: need at least 2 values, got {0}")]
    InsufficientReplicates(usize),

    #[error("no decay: {0}")]
    NoDecay(String),

    #[error("fit did not converge from any start (best sum of squares {best_ssr})")]
    NotConverged { best_ssr: f64 },

    #[error("degrees of freedom: N = {n} must exceed P = {p}")]
    DegreesOfFreedom { n: usize, p: usize },

    #[error("R² undefined: data has zero variance")]
    UndefinedRSquared,

    #[error("cannot compare fits: {0}")]
    Comparison(String),

    #[error("insufficient history: need at least 2 points, got {0}")]
    InsufficientHistory(usize),

    #[error("sampler contract violation: {0}")]
    Contract(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
