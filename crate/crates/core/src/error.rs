use thiserror::Error;

/// Errors raised by lattice, alignment, decoding and training operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("infeasible length: reference has {m} tokens but the lattice has {l} vertices")]
    InfeasibleLength { m: usize, l: usize },

    #[error("infeasible order: reference has {m} tokens, fewer than n-gram order {n}")]
    InfeasibleOrder { m: usize, n: usize },

    #[error("invalid n-gram order {0}: must be at least 1")]
    InvalidOrder(usize),

    #[error("degenerate lattice: expected number of {0}-grams is zero")]
    DegenerateLattice(usize),

    #[error("invalid token {token}: vocabulary size is {vocab_size}")]
    InvalidToken { token: usize, vocab_size: usize },

    #[error("empty n-gram")]
    EmptyGram,

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("undefined posterior: reference has zero probability under the lattice")]
    UndefinedPosterior,

    #[error("undefined gradient: reference has zero probability under the lattice")]
    UndefinedGradient,

    #[error("no feasible path emits the reference with nonzero probability")]
    NoFeasiblePath,

    #[error("gradient check infeasible: loss is not finite at the base point")]
    CheckInfeasible,

    #[error("lattice with {l} vertices exceeds the enumeration cap of {cap}")]
    OracleCap { l: usize, cap: usize },

    #[error("vocabulary of {vocab_size} tokens exceeds the enumeration cap of {cap}")]
    OracleVocabCap { vocab_size: usize, cap: usize },

    #[error("infeasible configuration: {0}")]
    InfeasibleConfig(String),

    #[error("malformed corpus spec: {0}")]
    MalformedSpec(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl Error {
    /// True for errors caused by reading, writing or parsing files rather than
    /// by the numerical content of the inputs.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Format(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
