use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("client index {client} out of range for {n_clients} clients")]
    ClientOutOfRange { client: usize, n_clients: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no participating clients in round {round}")]
    NoParticipants { round: usize },

    #[error("missing aggregation weight for client {client}")]
    MissingWeight { client: usize },

    #[error("client {client} appears more than once in round {round}")]
    DuplicateClient { client: usize, round: usize },

    #[error("out-of-order round: expected {expected}, got {got}")]
    OutOfOrderRound { expected: usize, got: usize },

    #[error("divergence: client {client} produced a non-finite iterate at local step {step} of round {round}")]
    Divergence {
        client: usize,
        round: usize,
        step: usize,
    },

    #[error("learning-rate constraint violated: {0}")]
    ConstraintViolation(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
