use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid bounds on axis {axis}: lo={lo}, hi={hi}")]
    InvalidBounds { axis: usize, lo: f64, hi: f64 },
    #[error("too few cells on axis {axis}: {n} (need at least 4)")]
    TooFewCells { axis: usize, n: usize },
    #[error("unsupported dimension {0}; expected 1 or 2")]
    UnsupportedDimension(usize),
    #[error("non-finite sample {value} at {position:?}")]
    NonFiniteSample { position: [f64; 2], value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("size mismatch: expected {expected} values, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("grid mismatch between fields")]
    GridMismatch,
    #[error("unknown compartment `{0}`")]
    UnknownCompartment(String),
    #[error("arity mismatch: expected {expected} compartments, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("parameter `{name}` must be finite and non-negative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("gamma must be positive, got {0}")]
    NonPositiveGamma(f64),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("reaction is not C1 near {point:?}: {reason}")]
    NotSmooth { point: Vec<f64>, reason: String },
    #[error("negative density {value} in compartment {compartment} cell {cell}")]
    NegativeDensity {
        compartment: usize,
        cell: usize,
        value: f64,
    },
    #[error("time step {dt} exceeds the stability bound {bound}")]
    CflViolation { dt: f64, bound: f64 },
    #[error("non-finite value in compartment {compartment} cell {cell} at t={time}")]
    NonFiniteState {
        compartment: usize,
        cell: usize,
        time: f64,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("support [{lo}, {hi}] does not fit in the domain with a 5-cell margin")]
    SupportExceedsDomain { lo: f64, hi: f64 },
    #[error("invalid study parameters: {0}")]
    InvalidStudy(String),
    #[error("table parse error: {0}")]
    TableParse(String),
}
