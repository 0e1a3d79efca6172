use thiserror::Error;

/// Errors surfaced by estimation, simulation and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("insufficient draws: need at least {need}, got {got}")]
    InsufficientDraws { need: usize, got: usize },

    #[error("rejection overflow in {0}")]
    RejectionOverflow(&'static str),

    #[error("non-stationary data generating process after {0} redraws")]
    NonStationaryDgp(usize),

    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("forecast origin {origin}: {source}")]
    Origin {
        origin: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("csv line {line}: {msg}")]
    CsvParse { line: u64, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_sweep(self, sweep: usize) -> Error {
        Error::Sweep {
            sweep,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_origin(self, origin: usize) -> Error {
        Error::Origin {
            origin,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
