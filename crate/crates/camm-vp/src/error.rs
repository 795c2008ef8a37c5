use thiserror::Error;

/// Error type shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum CammError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("ODE integration failed at r = {radius}: {reason}")]
    Ode { radius: f64, reason: String },

    #[error("iteration did not converge after {iterations} steps: {reason}")]
    NonConvergence { iterations: usize, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("file format error: {0}")]
    Format(String),
}

impl CammError {
    pub fn domain(msg: impl Into<String>) -> Self {
        CammError::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CammError>;
