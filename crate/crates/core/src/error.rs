use std::fmt;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged (non-finite loss){0}")]
    Divergence(StepLocation),

    #[error("member {member} failed to train: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical corruption: {0}")]
    Computation(String),

    #[error("gaussian bound is unbounded: aleatoric variance is zero but epistemic variance is {epistemic}")]
    Unbounded { epistemic: f64 },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("tree fit error: {0}")]
    Fit(String),

    #[error("mask extraction diverged at step {step}")]
    Extraction { step: usize },

    #[error("labels are required for this metric")]
    MissingLabels,

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where in a training run a divergence was detected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepLocation {
    pub epoch: Option<usize>,
    pub batch: Option<usize>,
}

impl fmt::Display for StepLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.epoch, self.batch) {
            (Some(e), Some(b)) => write!(f, " at epoch {e}, batch {b}"),
            (Some(e), None) => write!(f, " at epoch {e}"),
            (None, Some(b)) => write!(f, " at batch {b}"),
            (None, None) => Ok(()),
        }
    }
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
