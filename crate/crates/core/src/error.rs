use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("atom index {index} out of range for {n_atoms} atoms")]
    AtomIndexOutOfRange { index: usize, n_atoms: usize },

    #[error("{n_atoms} atoms requested; at most {max} are supported")]
    TooManyAtoms { n_atoms: usize, max: usize },

    #[error("operator is not Hermitian (max deviation {deviation:e})")]
    NonHermitian { deviation: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("expectation value has imaginary residual {residual:e}")]
    ComplexExpectation { residual: f64 },

    #[error("step size underflow at t = {t} us (h = {h:e}, local error {error:e})")]
    StepSizeUnderflow { t: f64, h: f64, error: f64 },

    #[error("integration produced non-finite values at t = {t} us")]
    NonFinite { t: f64 },

    #[error("trace drift {drift:e} at t = {t} us exceeds {limit:e}")]
    TraceDrift { t: f64, drift: f64, limit: f64 },

    #[error("no zero eigenvalue of J_x exists in the sector with {atoms} atoms in the g/e manifold")]
    NoNullSpace { atoms: usize },
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
