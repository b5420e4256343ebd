use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode audio {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },
    #[error("audio {0} has no samples")]
    EmptyAudio(String),
    #[error("audio too short for one analysis window ({samples} samples, need {window})")]
    EmptyFeature { samples: usize, window: usize },
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("all included languages have zero duration")]
    DegenerateDistribution,
    #[error("language {0} is in the sampling plan but has no training segments")]
    MissingLanguage(String),
    #[error("insufficient data: {rows} distinct rows for k = {k}")]
    InsufficientData { rows: usize, k: usize },
    #[error("mask selects no frames")]
    EmptyMask,
    #[error("non-finite values in {0}")]
    Numerical(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("vocabulary of size {size} cannot hold {needed} symbols; dropped: {casualties:?}")]
    VocabOverflow {
        size: usize,
        needed: usize,
        casualties: Vec<char>,
    },
    #[error("reference is empty")]
    EmptyReference,
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user-supplied configuration or malformed input files.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            e => matches!(e, Error::Config(_) | Error::Parse { .. } | Error::VocabOverflow { .. }),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }
}
