use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A state or intermediate quantity stopped being finite.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    /// A policy or configuration parameter lies outside its admissible range.
    #[error("parameter domain error: {0}")]
    ParameterDomain(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The skill container could not be parsed or violates its own invariants.
    #[error("skill file error: {0}")]
    SkillFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// An experiment stage failed; `stage` names it for the CLI exit message.
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                message: other.to_string(),
            },
        }
    }
}
