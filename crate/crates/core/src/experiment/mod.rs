//! Reproducible end-to-end experiments.
//!
//! Each run is a pure function of its [`ExperimentSpec`]: it returns a JSON
//! summary (pass/fail per predicate, tolerances, the resolved parameters and
//! the claim under test) plus CSV artifacts, all as bytes. Writing them out
//! is a separate, atomic step.

pub mod models;
pub mod params;
mod runs;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::aptest::ApTestError;
use crate::measures::{MeasureError, MeasurePath};
use crate::momentflow::{step_limit, MomentError};
use crate::report::{to_json_bytes, write_atomic};
use crate::sde::{LinearSdeModel, SdeError, SdeModel};
use crate::separation::SeparationError;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_PREDICATE_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::Io(_) => EXIT_CONFIG,
            ExperimentError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    /// Machine-readable error class.
    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config_error",
            ExperimentError::Numerical(_) => "numerical_error",
            ExperimentError::Io(_) => "io_error",
        }
    }
}

impl From<SdeError> for ExperimentError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::NumericalBlowup { .. } | SdeError::EmptyEnsemble => ExperimentError::Numerical(e.to_string()),
            _ => ExperimentError::Config(e.to_string()),
        }
    }
}

impl From<MomentError> for ExperimentError {
    fn from(e: MomentError) -> Self {
        ExperimentError::Numerical(e.to_string())
    }
}

impl From<MeasureError> for ExperimentError {
    fn from(e: MeasureError) -> Self {
        ExperimentError::Numerical(e.to_string())
    }
}

impl From<ApTestError> for ExperimentError {
    fn from(e: ApTestError) -> Self {
        match e {
            ApTestError::InvalidArgument(_) | ApTestError::WindowTooShort { .. } => {
                ExperimentError::Config(e.to_string())
            }
            _ => ExperimentError::Numerical(e.to_string()),
        }
    }
}

impl From<SeparationError> for ExperimentError {
    fn from(e: SeparationError) -> Self {
        match e {
            SeparationError::Dimension { .. } | SeparationError::InvalidArgument(_) => {
                ExperimentError::Config(e.to_string())
            }
            _ => ExperimentError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentName {
    BohrNeugebauer,
    Convolution,
    ShiftLimit,
    Parallelogram,
    Favard,
    Lyapunov,
    Amerio,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 7] = [
        ExperimentName::BohrNeugebauer,
        ExperimentName::Convolution,
        ExperimentName::ShiftLimit,
        ExperimentName::Parallelogram,
        ExperimentName::Favard,
        ExperimentName::Lyapunov,
        ExperimentName::Amerio,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::BohrNeugebauer => "bohr-neugebauer",
            ExperimentName::Convolution => "convolution",
            ExperimentName::ShiftLimit => "shift-limit",
            ExperimentName::Parallelogram => "parallelogram",
            ExperimentName::Favard => "favard",
            ExperimentName::Lyapunov => "lyapunov",
            ExperimentName::Amerio => "amerio",
        }
    }

    /// The claim an experiment exercises, echoed in its report.
    pub fn anchor(self) -> &'static str {
        match self {
            ExperimentName::BohrNeugebauer => {
                "an L2-bounded solution of a linear equation with almost periodic coefficients yields a solution that is almost periodic in distribution"
            }
            ExperimentName::Convolution => {
                "the law of a bounded solution is the law of the minimal solution convolved with the law of a bounded solution of the homogeneous equation"
            }
            ExperimentName::ShiftLimit => {
                "laws of solutions of shifted equations converge to the law of a solution of the limit equation"
            }
            ExperimentName::Parallelogram => {
                "parallelogram identity for two solutions, their midpoint and their half-difference"
            }
            ExperimentName::Favard => {
                "nontrivial bounded solutions of every homogeneous hull equation stay bounded away from zero in L2"
            }
            ExperimentName::Lyapunov => {
                "a Lyapunov function with a positive gap on differences of solutions forces uniqueness of the bounded solution law"
            }
            ExperimentName::Amerio => {
                "bounded solution laws that are not separated on a half-line coincide, so the bounded law is unique"
            }
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: ExperimentName,
    /// Model from a configuration file; `None` selects the built-in model.
    pub model: Option<SdeModel>,
    /// Parameter overrides; unset keys keep the defaults in [`params`].
    pub params: toml::Table,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn new(name: ExperimentName, seed: u64) -> Self {
        Self {
            name,
            model: None,
            params: toml::Table::new(),
            seed,
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub fn with_model(mut self, model: SdeModel) -> Self {
        self.model = Some(model);
        self
    }
}

/// Parses a `key=value` override; the value is read as a TOML value, so
/// `dt=0.01`, `scan=[1, 50]` and `y_std=[0, 0.5, 0.2]` all work.
pub fn parse_param(kv: &str) -> Result<(String, toml::Value), ExperimentError> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("parameter '{kv}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ExperimentError::Config(format!("parameter '{kv}' has an empty key")));
    }
    let table: toml::Table = format!("v = {}", raw.trim())
        .parse()
        .map_err(|e| ExperimentError::Config(format!("parameter {key}: {e}")))?;
    Ok((key.to_string(), table["v"].clone()))
}

/// One acceptance predicate of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predicate {
    pub name: String,
    pub pass: bool,
    pub value: Option<f64>,
    pub bound: Option<f64>,
    pub relation: String,
    pub detail: Option<String>,
}

impl Predicate {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            pass: value <= bound,
            value: Some(value),
            bound: Some(bound),
            relation: "<=".into(),
            detail: None,
        }
    }

    pub fn below(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            pass: value < bound,
            value: Some(value),
            bound: Some(bound),
            relation: "<".into(),
            detail: None,
        }
    }

    pub fn above(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            pass: value > bound,
            value: Some(value),
            bound: Some(bound),
            relation: ">".into(),
            detail: None,
        }
    }

    /// `|value − target| ≤ tol`.
    pub fn within(name: impl Into<String>, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            pass: (value - target).abs() <= tol,
            value: Some(value),
            bound: Some(tol),
            relation: format!("|value - ({target})| <="),
            detail: None,
        }
    }

    pub fn holds(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            value: None,
            bound: None,
            relation: "holds".into(),
            detail: Some(detail.into()),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub anchor: String,
    pub seed: u64,
    pub model: String,
    pub pass: bool,
    pub params: serde_json::Value,
    pub tolerances: BTreeMap<String, f64>,
    pub predicates: Vec<Predicate>,
    pub results: serde_json::Value,
    pub artifacts: Vec<String>,
}

/// A finished run: the report and the bytes of every file it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub files: Vec<(String, Vec<u8>)>,
}

impl ExperimentOutput {
    pub fn exit_code(&self) -> i32 {
        if self.report.pass {
            EXIT_PASS
        } else {
            EXIT_PREDICATE_FAIL
        }
    }

    pub fn summary_name(&self) -> String {
        format!("{}.json", self.report.experiment)
    }

    pub fn json_bytes(&self) -> Vec<u8> {
        to_json_bytes(&self.report)
    }

    /// Writes the artifacts and then the summary, each atomically.
    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
        }
        write_atomic(&dir.join(self.summary_name()), &self.json_bytes())?;
        Ok(())
    }
}

/// Accumulates predicates, tolerances and artifacts during a run.
pub(crate) struct Builder {
    name: ExperimentName,
    seed: u64,
    model: String,
    params: serde_json::Value,
    tolerances: BTreeMap<String, f64>,
    predicates: Vec<Predicate>,
    files: Vec<(String, Vec<u8>)>,
}

impl Builder {
    pub(crate) fn new<P: Serialize>(name: ExperimentName, seed: u64, model: String, params: &P) -> Self {
        Self {
            name,
            seed,
            model,
            params: serde_json::to_value(params).expect("serializable parameters"),
            tolerances: BTreeMap::new(),
            predicates: Vec::new(),
            files: Vec::new(),
        }
    }

    pub(crate) fn tolerance(&mut self, name: &str, v: f64) {
        self.tolerances.insert(name.into(), v);
    }

    pub(crate) fn check(&mut self, p: Predicate) {
        self.predicates.push(p);
    }

    pub(crate) fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((format!("{}/{}", self.name.as_str(), name.into()), bytes));
    }

    pub(crate) fn finish<R: Serialize>(self, results: &R) -> ExperimentOutput {
        let pass = !self.predicates.is_empty() && self.predicates.iter().all(|p| p.pass);
        ExperimentOutput {
            report: ExperimentReport {
                experiment: self.name.as_str().into(),
                anchor: self.name.anchor().into(),
                seed: self.seed,
                model: self.model,
                pass,
                params: self.params,
                tolerances: self.tolerances,
                predicates: self.predicates,
                results: serde_json::to_value(results).expect("serializable results"),
                artifacts: self.files.iter().map(|f| f.0.clone()).collect(),
            },
            files: self.files,
        }
    }
}

pub(crate) fn resolve<T: DeserializeOwned + Default>(overrides: &toml::Table) -> Result<T, ExperimentError> {
    T::deserialize(toml::Value::Table(overrides.clone())).map_err(|e| ExperimentError::Config(e.to_string()))
}

/// The linear model to use and a label for the report.
pub(crate) fn linear_model(
    spec: &ExperimentSpec,
    default: fn() -> LinearSdeModel,
    default_label: &str,
) -> Result<(LinearSdeModel, String), ExperimentError> {
    match &spec.model {
        None => Ok((default(), format!("built-in: {default_label}"))),
        Some(SdeModel::Linear(l)) => Ok((l.clone(), "configuration file".into())),
        Some(SdeModel::Nonlinear(_)) => Err(ExperimentError::Config(format!(
            "experiment {} needs a linear model",
            spec.name
        ))),
    }
}

/// RK4 step: the largest `path_step/k` within the model's step limit.
pub(crate) fn flow_step(model: &LinearSdeModel, path_step: f64) -> (f64, usize) {
    let k = (path_step / step_limit(model) - 1e-9).ceil().max(1.0) as usize;
    (path_step / k as f64, k)
}

/// Every `every`-th law of a path.
pub(crate) fn thin(path: &MeasurePath, every: usize) -> Result<MeasurePath, ExperimentError> {
    let idx: Vec<usize> = (0..path.len()).step_by(every.max(1)).collect();
    Ok(MeasurePath::new(
        idx.iter().map(|&k| path.times()[k]).collect(),
        idx.iter().map(|&k| path.laws()[k].clone()).collect(),
    )?)
}

/// Runs one experiment.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    match spec.name {
        ExperimentName::BohrNeugebauer => runs::bohr_neugebauer(spec),
        ExperimentName::Convolution => runs::convolution(spec),
        ExperimentName::ShiftLimit => runs::shift_limit(spec),
        ExperimentName::Parallelogram => runs::parallelogram(spec),
        ExperimentName::Favard => runs::favard(spec),
        ExperimentName::Lyapunov => runs::lyapunov(spec),
        ExperimentName::Amerio => runs::amerio(spec),
    }
}
