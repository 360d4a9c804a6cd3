use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported drift family: {0}")]
    UnsupportedFamily(String),

    #[error("degenerate diffusion: {0}")]
    DegenerateDiffusion(String),

    #[error("degenerate noise: sigma0^2 + sigma1^2 must be positive")]
    DegenerateNoise,

    #[error("inconsistent constants: {0}")]
    InconsistentConstants(String),

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("simulation diverged at t = {time} (non-finite position)")]
    Diverged { time: f64 },

    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    #[error("no decay window: the floor dominates the series; increase N or decrease epsilon")]
    NoDecayWindow,

    #[error("assumption check `{check}` rejected the model (max violation {max_violation:e})")]
    AssumptionRejected { check: String, max_violation: f64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
