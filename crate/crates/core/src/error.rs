use thiserror::Error;

/// Error taxonomy shared by the whole crate.
///
/// The CLI maps these onto exit codes: configuration problems exit 1,
/// runtime/numeric faults exit 2, verification failures exit 3.
#[derive(Debug, Error)]
pub enum MegError {
    /// Bad shapes, invalid hyperparameters, unknown config keys.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced NaN/inf where a finite value is required.
    #[error("numeric fault: {0}")]
    Numeric(String),

    /// An evaluation protocol was violated (label/mode mismatches and the like).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Checkpoint or archive content does not match its checksum.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// Checkpoint written by an unknown format version.
    #[error("unsupported checkpoint version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Operation refused outside its diagnostic scope (e.g. d > 16).
    #[error("diagnostic scope error: {0}")]
    Scope(String),

    /// Dataset files missing or malformed beyond tolerance.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MegError>;

impl MegError {
    pub fn config(msg: impl Into<String>) -> Self {
        MegError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        MegError::Numeric(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        MegError::Protocol(msg.into())
    }
}
