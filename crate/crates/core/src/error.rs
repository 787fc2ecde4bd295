use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("nonlinearity outside the admissible class: {0}")]
    Class(String),
    #[error("grid resolution too coarse: {0}")]
    Resolution(String),
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("search failed: {0}")]
    Search(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Class(_) | Error::Domain(_) | Error::Resolution(_) | Error::Json(_) => 3,
            Error::Search(_) | Error::Numerical(_) | Error::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
