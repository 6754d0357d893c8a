use std::path::PathBuf;

/// Errors shared across the library.
///
/// Data errors (bad files, malformed vectors, dimension mismatches) are kept
/// distinct from usage errors so the CLI can map them to its exit codes.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: query has {query} components, dataset rows have {dataset}")]
    DimensionMismatch { query: usize, dataset: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },

    #[error("top-k provider returned duplicate id {id}")]
    DuplicateProviderId { id: u32 },

    #[error("top-k provider certifies gap {certified} but caller assumed {assumed}")]
    GapCertificateExceeded { certified: f64, assumed: f64 },

    #[error("top-k provider returned no certificate and none was supplied by the caller")]
    MissingGapCertificate,

    #[error("requested k = {k} needs kl >= {required:.0}; exact computation over n = {n} is cheaper")]
    ExactCheaper { k: usize, n: usize, required: f64 },

    #[error("{path}: {reason} at byte offset {offset}")]
    MalformedFile {
        path: PathBuf,
        reason: String,
        offset: u64,
    },

    #[error("{path}: expected magic {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{path}: unsupported version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("index was built for n = {index_n}, d = {index_d}; dataset has n = {data_n}, d = {data_d}")]
    IndexMismatch {
        index_n: u64,
        index_d: u32,
        data_n: u64,
        data_d: u32,
    },

    #[error("gradient became non-finite at iteration {iteration}")]
    DivergedGradient { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
