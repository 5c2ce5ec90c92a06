use thiserror::Error;

use crate::qmodel::ParamName;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QestError {
    /// An input lies outside the admissible domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested parameter has no representation in this formulation
    /// (e.g. the relaxation rate does not enter the Hamiltonian).
    #[error("parameter {0:?} is not supported here")]
    UnsupportedParameter(ParamName),

    /// A numerical routine produced a result outside its tolerance band.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T, E = QestError> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(QestError::Domain(msg.into()))
}
