use thiserror::Error;

/// Errors raised by ensemble fitting, reachability oracles and the simulators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid observable set: {0}")]
    InvalidObservables(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("no probability vector matches the macrostate values")]
    InfeasibleMacrostate,

    #[error("equivalence class has a single member")]
    SingletonClass,

    #[error("sampling gave up after {attempts} rejected proposals")]
    SamplingExhausted { attempts: usize },

    #[error("value {value} is outside the open spectral range ({lo}, {hi})")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("mean values lie on or outside the hull of the joint spectrum")]
    OutsideHull,

    #[error("all eigenvalues are equal")]
    DegenerateSpectrum,

    #[error("observables are affinely dependent; multipliers are not unique")]
    RankDeficientObservables,

    #[error("fit did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("inverse temperature must be nonzero")]
    ZeroBeta,

    #[error("inverse temperature must be positive, got {0}")]
    NonpositiveBeta(f64),

    #[error("state is not compatible with the macrostate (deviation {0:e})")]
    IncompatibleState(f64),

    #[error("composite dimension {dim} exceeds the limit {limit}")]
    SizeLimit { dim: usize, limit: usize },

    #[error("Hamiltonian is proportional to the identity")]
    TrivialHamiltonian,

    #[error("Hamiltonian is zero")]
    ZeroHamiltonian,

    #[error("dimension {0} is too small (need at least 3 levels)")]
    DimensionTooSmall(usize),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("charge lattice of {points} points exceeds the budget of {budget}")]
    ChargeRangeOverflow { points: usize, budget: usize },

    #[error("integer overflow while clearing denominators")]
    IntegerOverflow,

    #[error("moment order {0} is not supported (must be between 2 and 8)")]
    OrderTooHigh(usize),

    #[error("moment order {0} must be even and at least 2")]
    InvalidOrder(usize),

    #[error("total variance is zero")]
    ZeroVariance,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// Stable machine-readable tag, used in error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidObservables(_) => "InvalidObservables",
            Error::InvalidState(_) => "InvalidState",
            Error::InvalidDensityMatrix(_) => "InvalidDensityMatrix",
            Error::InfeasibleMacrostate => "InfeasibleMacrostate",
            Error::SingletonClass => "SingletonClass",
            Error::SamplingExhausted { .. } => "SamplingExhausted",
            Error::OutOfRange { .. } => "OutOfRange",
            Error::OutsideHull => "OutOfRange",
            Error::DegenerateSpectrum => "DegenerateSpectrum",
            Error::RankDeficientObservables => "RankDeficientObservables",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::ZeroBeta => "ZeroBeta",
            Error::NonpositiveBeta(_) => "NonpositiveBeta",
            Error::IncompatibleState(_) => "IncompatibleState",
            Error::SizeLimit { .. } => "SizeLimit",
            Error::TrivialHamiltonian => "TrivialHamiltonian",
            Error::ZeroHamiltonian => "ZeroHamiltonian",
            Error::DimensionTooSmall(_) => "DimensionTooSmall",
            Error::Lp(_) => "LpFailure",
            Error::ChargeRangeOverflow { .. } => "ChargeRangeOverflow",
            Error::IntegerOverflow => "IntegerOverflow",
            Error::OrderTooHigh(_) => "OrderTooHigh",
            Error::InvalidOrder(_) => "InvalidOrder",
            Error::ZeroVariance => "ZeroVariance",
            Error::InvalidArgument(_) => "InvalidArgument",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
