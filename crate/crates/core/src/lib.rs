//! Linear macromodel toolkit for a four-stage OTA compensated by a single
//! Miller capacitor and an R–C shunt at the third-stage output.
//!
//! The crate covers model construction and calibration ([`macromodel`]),
//! exact descriptor-system analysis ([`engine`]), closed-form stability
//! expressions and load-range solvers ([`analysis`]), step and slew
//! simulation ([`transient`]), Monte-Carlo statistics ([`variability`]) and
//! figure-of-merit benchmarking ([`fom`]).
//!
//! Batch work (frequency sweeps, load scans, Monte-Carlo samples) goes
//! through [`exec`], which uses rayon when the `parallel` feature is on.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod exec;
pub mod fom;
pub mod linalg;
pub mod macromodel;
pub mod transient;
pub mod units;
pub mod variability;

pub use error::{OtaError, Result};
pub use exec::Execution;
pub use macromodel::{
    build_model, calibrate_reference, check_validity, CalibrationDefaults, CalibrationTargets,
    CompensationParams, LoadCondition, OtaMacromodel, StageParams, ValidityReport,
};
