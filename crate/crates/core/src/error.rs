use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, rejected before any work is done.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (length mismatch, index
    /// out of range).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical divergence at batch {batch} (epoch {epoch}): loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("encoding overflow: |value| = {value} exceeds headroom {limit}")]
    EncodingOverflow { value: f64, limit: f64 },

    /// Homomorphic addition of ciphertexts that disagree on scale or level.
    #[error("ciphertext mismatch: {0}")]
    ScaleMismatch(String),

    #[error("decryption overflow: coefficient magnitude 2^{bits:.1} exceeds plaintext headroom")]
    DecryptionOverflow { bits: f64 },

    #[error("malformed ciphertext bytes: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Contract(_) => "contract",
            Error::Divergence { .. } => "divergence",
            Error::EncodingOverflow { .. } => "encoding_overflow",
            Error::ScaleMismatch(_) => "scale_mismatch",
            Error::DecryptionOverflow { .. } => "decryption_overflow",
            Error::Malformed(_) => "malformed",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
