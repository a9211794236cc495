use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter shape mismatch: expected {expected} values, got {got}")]
    ParameterShape { expected: usize, got: usize },

    #[error("episode already finished; reset before stepping")]
    EpisodeFinished,

    #[error("invalid numeric input: {0}")]
    NumericInput(String),

    #[error("invalid definition: {0}")]
    InvalidSpec(String),

    #[error("training diverged at update {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    #[error("outer optimizer protocol error: {0}")]
    Protocol(String),

    #[error("outer optimization failed: {0}")]
    OptimizationFailed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("policy file error: {0}")]
    PolicyFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::TrainingDiverged { .. } => 3,
            Error::OptimizationFailed(_) => 4,
            _ => 1,
        }
    }
}
