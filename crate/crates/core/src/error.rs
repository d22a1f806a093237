use thiserror::Error;

/// Errors raised across the concentration pipeline.
#[derive(Debug, Error)]
pub enum DscoError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    #[error("training failed after {epochs} epochs (final loss {final_loss:.6})")]
    TrainingFailure {
        epochs: usize,
        final_loss: f64,
        loss_curve: Vec<f64>,
    },

    #[error("composition error: {0}")]
    Composition(String),

    #[error("dataset generation error: {0}")]
    Generation(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error("refused: {0}")]
    Refusal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DscoError> = std::result::Result<T, E>;
