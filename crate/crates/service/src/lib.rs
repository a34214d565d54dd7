//! Command line and live-session front end for the sketchfuse tracker.

pub mod cli;
pub mod heat;
pub mod server;
pub mod session;
pub mod wire;

pub use session::{Session, SessionMode, SessionOptions};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] sketchfuse_core::Error),

    /// Config problems, already prefixed with the file (or preset) name.
    #[error("{0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },

    #[error("{0}")]
    Output(String),
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { context: "io".into(), source }
    }
}
