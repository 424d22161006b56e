use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 2")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero vector cannot be normalized or gauge-fixed")]
    ZeroVector,

    #[error("operator is not Hermitian (max |A - A^dag| = {0:e})")]
    NonHermitian(f64),

    #[error("operator is not traceless (|Tr| = {0:e})")]
    NotTraceless(f64),

    #[error("coefficient has imaginary residue {0:e}")]
    ImaginaryResidue(f64),

    #[error("dynamics converged to a fixed point; no limit cycle")]
    NoCycle,

    #[error("no overlap peak above {threshold} found within {window} time units")]
    PeriodNotFound { threshold: f64, window: f64 },

    #[error("isochron phase not converged: endpoint fidelity to cycle {fidelity}")]
    NotConverged { fidelity: f64 },

    #[error("gauge reference amplitude too small ({0:e})")]
    GaugeReference(f64),

    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    #[error("integration unstable: {0}")]
    Stability(String),

    #[error("invalid density operator: {0}")]
    InvalidState(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("histogram binning mismatch: {0} vs {1} bins")]
    BinningMismatch(usize, usize),

    #[error("PRC evaluation failed at theta={theta}, generator {index}: {source}")]
    PrcEvaluation {
        theta: f64,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown model '{0}'")]
    UnknownModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
