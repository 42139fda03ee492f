use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("solvability violated: {0}")]
    Solvability(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Configuration problems map to exit code 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Mismatch(_))
    }
}
