use std::path::PathBuf;

use thiserror::Error;

use crate::lti::LtiError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lti(#[from] LtiError),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("composition is improper (relative degree {relative_degree}); raise the Q-filter order")]
    ImproperComposition { relative_degree: isize },
    #[error("closed loop is unstable: {0}")]
    UnstableDesign(String),
    #[error("closed loop diverged at t = {time:.4} s: |{signal}| exceeded {threshold:e}")]
    UnstableLoop {
        time: f64,
        signal: &'static str,
        threshold: f64,
    },
    #[error("agent at cascade position {position} (j = {j}) failed: {source}")]
    AgentFailed {
        position: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("filter has right-half-plane poles; offline application would be acausal-unstable")]
    UnstableInverse,
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("non-uniform sampling in {path} at row {row}")]
    NonuniformSampling { path: PathBuf, row: usize },
    #[error("record {path} failed its checksum")]
    CorruptRecord { path: PathBuf },
    #[error("missing record for cascade position {position}")]
    MissingRecord { position: usize },
    #[error("record for cascade position {position} already exists")]
    RecordExists { position: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
