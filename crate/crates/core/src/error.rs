use thiserror::Error;

/// Errors surfaced by the simulator, environment, learner and evaluation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("simulation diverged: non-finite value in {field}")]
    Diverged { field: &'static str },

    #[error("observation timestamps must be strictly increasing (newest {newest}, got {got})")]
    Ordering { newest: f64, got: f64 },

    #[error("latency buffer is empty")]
    EmptyBuffer,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("episode already finished; call reset before stepping")]
    EpisodeDone,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown parameter `{name}`; valid names: {valid}")]
    UnknownParameter { name: String, valid: String },

    #[error("latency calibration failed: {0}")]
    Calibration(String),

    #[error("worker {worker} diverged at step {step}: {source}")]
    Worker {
        worker: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("need at least {needed} entries, got {got}")]
    TooFew { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
