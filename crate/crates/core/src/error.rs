use thiserror::Error;

/// Errors produced anywhere in the prognostics pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("timestamps are not monotone at sample {index}")]
    UnsortedInput { index: usize },

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no such channel: {0}")]
    NoSuchChannel(String),

    #[error("channel {channel} has a missing value at its start or end; gap cannot be bracketed")]
    UnboundedGap { channel: String },

    #[error("signal has too few extrema to be decomposed")]
    NotDecomposable,

    #[error("decomposition has no oscillatory component")]
    NoOscillatoryComponent,

    #[error("target leakage: {0}")]
    Leakage(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("insufficient training data: {rows} rows cannot hold a test sample of {sample}")]
    InsufficientTrainingData { rows: usize, sample: usize },

    #[error("all paired differences are zero")]
    DegenerateSample,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

impl Error {
    /// Process exit status: 2 for configuration errors, 3 for data errors,
    /// 4 for anything else.
    pub fn exit_code(&self) -> i32 {
        if let Error::Stage { stage: "config", .. } = self {
            return 2;
        }
        match self.root() {
            Error::InvalidSpec(_) | Error::Leakage(_) => 2,
            Error::EmptyInput
            | Error::UnsortedInput { .. }
            | Error::InsufficientData { .. }
            | Error::NoSuchChannel(_)
            | Error::UnboundedGap { .. }
            | Error::NotDecomposable
            | Error::NoOscillatoryComponent
            | Error::InsufficientTrainingData { .. }
            | Error::DegenerateSample
            | Error::Parse { .. }
            | Error::Io(_) => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
