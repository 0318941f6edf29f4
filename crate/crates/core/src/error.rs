use thiserror::Error;

/// Errors raised by model construction and the analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OtaError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: String, value: f64 },
    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),
    #[error("system matrix singular at {0} Hz")]
    SingularAtFrequency(f64),
    #[error("eigensolver failed: {0}")]
    EigensolverFailure(String),
    #[error("open-loop magnitude never crosses unity on the search grid")]
    NoCrossover,
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("no valid load range (cl_min = {cl_min:e} F, cl_max = {cl_max:e} F)")]
    NoValidRange { cl_min: f64, cl_max: f64 },
    #[error("validity violated: {0}")]
    ValidityViolated(String),
    #[error("integrator stalled at t = {t:e} s (step {h:e} s)")]
    IntegratorStall { t: f64, h: f64 },
    #[error("inconsistent benchmark entry {label}: stored {stored}, recomputed {recomputed}")]
    InconsistentEntry {
        label: String,
        stored: f64,
        recomputed: f64,
    },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, OtaError>;

pub(crate) fn invalid(name: impl Into<String>, value: f64) -> OtaError {
    OtaError::InvalidParameter {
        name: name.into(),
        value,
    }
}
