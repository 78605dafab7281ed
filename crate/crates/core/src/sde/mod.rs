//! Model definitions, the configuration language, and ensemble simulation.

mod config;
pub mod expr;
mod model;
mod simulate;

pub use config::{line_col, parse_model, ParsedModel};
pub use expr::{Expression, Scope};
pub use model::{
    estimate_regularity, LinearSdeModel, NonlinearSdeModel, RegularityReport, SdeModel, REGULARITY_T_GRID,
};
pub use simulate::{
    full_law_path, law_path, simulate_ensemble, simulate_ensemble_with, simulate_from_states, PathEnsemble,
    SimOptions, SnapWarning, BLOWUP_THRESHOLD,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("unknown coefficient '{name}' at line {line}, column {col}")]
    UnknownCoefficient { line: usize, col: usize, name: String },
    #[error("unsafe division at line {line}, column {col}: {msg}")]
    UnsafeDivision { line: usize, col: usize, msg: String },
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical blowup at t = {time}")]
    NumericalBlowup { time: f64 },
    #[error("empty ensemble or sample set")]
    EmptyEnsemble,
}
