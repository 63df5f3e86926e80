use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {len} bytes is not a whole number of {record}-byte records")]
    Format { path: PathBuf, len: u64, record: usize },
    #[error("{path}: record {index} has label {label}, expected 0-9")]
    CorruptRecord { path: PathBuf, index: usize, label: u8 },
    #[error("{path}: run id {run_id:?} already present")]
    RunIdCollision { path: PathBuf, run_id: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: header {found:?} does not match {expected:?}")]
    Schema { path: PathBuf, found: Vec<String>, expected: Vec<String> },
    #[error(transparent)]
    Core(#[from] ngen_core::Error),
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> LabError {
    let path = path.into();
    move |source| LabError::Io { path, source }
}
