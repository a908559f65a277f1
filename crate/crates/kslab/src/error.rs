use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or configuration value violates a documented invariant.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The parameter set lies outside every regime the analysis covers.
    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    /// A field stopped being finite (or a species left the positive cone
    /// badly enough that the run cannot continue).
    #[error("solution blew up at t = {t}: {what}")]
    BlowUp { t: f64, what: String },

    /// A quantity that must be strictly positive was not (e.g. a species
    /// value handed to a logarithmic entropy).
    #[error("domain error: {0}")]
    Domain(String),

    /// An explicit step was requested beyond its stability bound.
    #[error("rejected step: dt = {dt:.6e} exceeds stability bound {bound:.6e} ({what})")]
    RejectedStep { dt: f64, bound: f64, what: String },

    /// Malformed snapshot file.
    #[error("snapshot {path:?}: {what}")]
    Snapshot { path: PathBuf, what: String },

    /// Grids of two operands (or a file and the active run) do not match.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn snapshot(path: impl Into<PathBuf>, what: impl Into<String>) -> Self {
        Error::Snapshot { path: path.into(), what: what.into() }
    }
}
