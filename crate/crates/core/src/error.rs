use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mass matrix is singular or too ill-conditioned (condition number {condition:e})")]
    SingularMass { condition: f64 },
    #[error("origin is not asymptotically stable: eigenvalue with real part {real_part:e}")]
    UnstableOrigin { real_part: f64 },
    #[error("matrix is defective or its eigenvector basis is too ill-conditioned (condition number {condition:e})")]
    DefectiveMatrix { condition: f64 },
    #[error("spectrum is not stable: eigenvalue with real part {real_part:e}")]
    UnstableSpectrum { real_part: f64 },
    #[error("subspace dimension {dim} splits a complex conjugate pair")]
    PairSplit { dim: usize },
    #[error("resonance enumeration needs {needed} combinations, budget is {budget}")]
    CombinatorialCap { needed: u128, budget: u128 },
    #[error("inner-outer resonance: exponents {exponents:?} resonate with eigenvalue index {index}")]
    InnerOuterResonance { exponents: Vec<u32>, index: usize },
    #[error("frequency {omega} rad/s is at or above the Nyquist frequency {nyquist} rad/s")]
    NyquistViolation { omega: f64, nyquist: f64 },
    #[error("truncation interval [{lower}, {upper}] has acceptance probability {probability:e}")]
    DegenerateInterval { lower: f64, upper: f64, probability: f64 },
    #[error("time {t} s is outside the noise record [0, {end}) s")]
    TimeOutOfRange { t: f64, end: f64 },
    #[error("Newton iteration did not converge at step {step} (residual {residual:e})")]
    NewtonDivergence { step: usize, residual: f64 },
    #[error("state left the finite range at step {step}; the reduced model is outside its domain of validity")]
    NonFiniteState { step: usize },
    #[error("signal length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("frequency grids differ")]
    GridMismatch,
    #[error("i/o error: {0}")]
    Io(String),
    #[error("realization {index} (seed {seed}) failed")]
    Realization {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
