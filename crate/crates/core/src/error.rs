use thiserror::Error;

/// Errors produced by the library and the experiment harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RwreError {
    /// Malformed law parameters or experiment configuration. `line` is the
    /// 1-based config line when the error comes from a config file.
    #[error("config error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, msg: String },

    /// The operation is not defined for the supplied law or parameters.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method failed to reach its tolerance.
    #[error("numerical error: {msg} (residual {residual:e})")]
    Numerical { msg: String, residual: f64 },

    /// A memory or runtime guard refused the computation.
    #[error("resource guard: {0}")]
    Resource(String),

    /// Not enough samples (blocks, replicas, points) to form the estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A caller broke an operation contract (e.g. a window too small).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(String),
}

impl RwreError {
    pub fn config(msg: impl Into<String>) -> Self {
        RwreError::Config { line: None, msg: msg.into() }
    }

    pub fn config_at(line: usize, msg: impl Into<String>) -> Self {
        RwreError::Config { line: Some(line), msg: msg.into() }
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        RwreError::Domain(msg.into())
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RwreError::Config { .. } | RwreError::Domain(_) | RwreError::Contract(_) => 2,
            RwreError::Resource(_) => 3,
            RwreError::Numerical { .. } | RwreError::InsufficientData(_) => 4,
            RwreError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for RwreError {
    fn from(e: std::io::Error) -> Self {
        RwreError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RwreError>;
