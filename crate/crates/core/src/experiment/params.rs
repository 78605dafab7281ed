//! Parameters of every experiment with their defaults.
//!
//! | experiment      | parameter            | default            |
//! |-----------------|----------------------|--------------------|
//! | bohr-neugebauer | burn_in              | 40                 |
//! |                 | path_step            | 0.1                |
//! |                 | base_window          | [0, 12.5]          |
//! |                 | epsilon              | 0.05               |
//! |                 | scan                 | [1, 200]           |
//! |                 | tau_step             | 0.1                |
//! |                 | max_gap              | 40                 |
//! |                 | initial_means        | [0, 1]             |
//! |                 | horizon              | 10                 |
//! |                 | rate_target          | −1                 |
//! |                 | rate_tol             | 0.15               |
//! |                 | final_rho_tol        | 1e-3               |
//! | convolution     | n_paths              | 10000              |
//! |                 | dt                   | 0.002              |
//! |                 | horizon              | 10                 |
//! |                 | checkpoints          | 10                 |
//! |                 | burn_in              | 40                 |
//! |                 | y_std                | [0, 0.5, 0.2]      |
//! |                 | bl_tol               | 0.05               |
//! |                 | epsilon              | 0.1                |
//! |                 | path_step            | 0.1                |
//! |                 | scan                 | [1, 100]           |
//! |                 | base_window          | [0, 6.3]           |
//! | shift-limit     | n_paths              | 10000              |
//! |                 | dt                   | 0.01               |
//! |                 | horizon              | 10                 |
//! |                 | sample_step          | 0.1                |
//! |                 | x0                   | 0                  |
//! |                 | levels               | 5                  |
//! |                 | max_multiple         | 100000             |
//! |                 | final_rho_tol        | 0.05               |
//! | parallelogram   | horizon              | 5                  |
//! |                 | x1, x2               | 2, −1              |
//! |                 | block_x1, block_x2   | [1, 0.5, −0.5], [−1, 1, 0.3] |
//! |                 | n_paths              | 20000              |
//! |                 | dt                   | 0.01               |
//! |                 | checkpoints          | 10                 |
//! |                 | residual_tol         | 1e-8               |
//! |                 | se_factor            | 4                  |
//! | favard          | scan_t               | 200                |
//! |                 | tol                  | 1e-6               |
//! |                 | shifts               | 20                 |
//! |                 | shift_range          | 1000               |
//! | lyapunov        | t_grid               | [0, 200] step 0.01 |
//! |                 | x_grid               | [−10, 10] step 0.1 |
//! |                 | h_t_grid             | [0, 200] step 0.1  |
//! |                 | h_x_grid             | [−10, 10] step 0.5 |
//! |                 | l0                   | 1                  |
//! | amerio          | horizon              | 30                 |
//! |                 | path_step            | 0.1                |
//! |                 | initial_means        | [−2, 0, 2, 4]      |
//!
//! Moment flows use the largest RK4 step that divides the path step and
//! respects the model's step limit.

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::separation::UniformGrid;

fn positive(name: &str, v: f64) -> Result<(), ExperimentError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<(), ExperimentError> {
    if v >= 1 {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must be at least 1")))
    }
}

fn interval(name: &str, w: (f64, f64)) -> Result<(), ExperimentError> {
    if w.0.is_finite() && w.1.is_finite() && w.0 < w.1 {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must be a finite interval [a, b] with a < b")))
    }
}

fn finite(name: &str, v: &[f64]) -> Result<(), ExperimentError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must be finite")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BohrNeugebauerParams {
    pub burn_in: f64,
    pub path_step: f64,
    pub base_window: (f64, f64),
    pub epsilon: f64,
    pub scan: (f64, f64),
    pub tau_step: f64,
    pub max_gap: f64,
    pub initial_means: Vec<f64>,
    pub horizon: f64,
    pub rate_target: f64,
    pub rate_tol: f64,
    pub final_rho_tol: f64,
}

impl Default for BohrNeugebauerParams {
    fn default() -> Self {
        Self {
            burn_in: 40.0,
            path_step: 0.1,
            base_window: (0.0, 12.5),
            epsilon: 0.05,
            scan: (1.0, 200.0),
            tau_step: 0.1,
            max_gap: 40.0,
            initial_means: vec![0.0, 1.0],
            horizon: 10.0,
            rate_target: -1.0,
            rate_tol: 0.15,
            final_rho_tol: 1e-3,
        }
    }
}

impl BohrNeugebauerParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        positive("burn_in", self.burn_in)?;
        positive("path_step", self.path_step)?;
        interval("base_window", self.base_window)?;
        positive("epsilon", self.epsilon)?;
        interval("scan", self.scan)?;
        positive("tau_step", self.tau_step)?;
        positive("max_gap", self.max_gap)?;
        positive("horizon", self.horizon)?;
        positive("rate_tol", self.rate_tol)?;
        positive("final_rho_tol", self.final_rho_tol)?;
        finite("initial_means", &self.initial_means)?;
        finite("rate_target", &[self.rate_target])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvolutionParams {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub checkpoints: usize,
    pub burn_in: f64,
    pub y_std: Vec<f64>,
    pub bl_tol: f64,
    pub epsilon: f64,
    pub path_step: f64,
    pub scan: (f64, f64),
    pub base_window: (f64, f64),
}

impl Default for ConvolutionParams {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 0.002,
            horizon: 10.0,
            checkpoints: 10,
            burn_in: 40.0,
            y_std: vec![0.0, 0.5, 0.2],
            bl_tol: 0.05,
            epsilon: 0.1,
            path_step: 0.1,
            scan: (1.0, 100.0),
            base_window: (0.0, 6.3),
        }
    }
}

impl ConvolutionParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        at_least_one("n_paths", self.n_paths)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        at_least_one("checkpoints", self.checkpoints)?;
        positive("burn_in", self.burn_in)?;
        finite("y_std", &self.y_std)?;
        positive("bl_tol", self.bl_tol)?;
        positive("epsilon", self.epsilon)?;
        positive("path_step", self.path_step)?;
        interval("scan", self.scan)?;
        interval("base_window", self.base_window)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftLimitParams {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub sample_step: f64,
    pub x0: f64,
    pub levels: usize,
    pub max_multiple: usize,
    pub final_rho_tol: f64,
}

impl Default for ShiftLimitParams {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            dt: 0.01,
            horizon: 10.0,
            sample_step: 0.1,
            x0: 0.0,
            levels: 5,
            max_multiple: 100_000,
            final_rho_tol: 0.05,
        }
    }
}

impl ShiftLimitParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        at_least_one("n_paths", self.n_paths)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        positive("sample_step", self.sample_step)?;
        finite("x0", &[self.x0])?;
        at_least_one("levels", self.levels)?;
        at_least_one("max_multiple", self.max_multiple)?;
        positive("final_rho_tol", self.final_rho_tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParallelogramParams {
    pub horizon: f64,
    pub x1: f64,
    pub x2: f64,
    pub block_x1: Vec<f64>,
    pub block_x2: Vec<f64>,
    pub n_paths: usize,
    pub dt: f64,
    pub checkpoints: usize,
    pub residual_tol: f64,
    pub se_factor: f64,
}

impl Default for ParallelogramParams {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            x1: 2.0,
            x2: -1.0,
            block_x1: vec![1.0, 0.5, -0.5],
            block_x2: vec![-1.0, 1.0, 0.3],
            n_paths: 20_000,
            dt: 0.01,
            checkpoints: 10,
            residual_tol: 1e-8,
            se_factor: 4.0,
        }
    }
}

impl ParallelogramParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        positive("horizon", self.horizon)?;
        finite("x1, x2", &[self.x1, self.x2])?;
        finite("block_x1", &self.block_x1)?;
        finite("block_x2", &self.block_x2)?;
        at_least_one("n_paths", self.n_paths)?;
        positive("dt", self.dt)?;
        at_least_one("checkpoints", self.checkpoints)?;
        positive("residual_tol", self.residual_tol)?;
        positive("se_factor", self.se_factor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FavardParams {
    pub scan_t: f64,
    pub tol: f64,
    pub shifts: usize,
    pub shift_range: f64,
}

impl Default for FavardParams {
    fn default() -> Self {
        Self {
            scan_t: 200.0,
            tol: 1e-6,
            shifts: 20,
            shift_range: 1000.0,
        }
    }
}

impl FavardParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        positive("scan_t", self.scan_t)?;
        positive("tol", self.tol)?;
        positive("shift_range", self.shift_range)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    pub t_grid: UniformGrid,
    pub x_grid: UniformGrid,
    pub h_t_grid: UniformGrid,
    pub h_x_grid: UniformGrid,
    pub l0: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        let h = crate::separation::HGrid::default();
        Self {
            t_grid: UniformGrid::corollary_time(),
            x_grid: UniformGrid::state(),
            h_t_grid: h.t,
            h_x_grid: h.x,
            l0: 1.0,
        }
    }
}

impl LyapunovParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        for (name, g) in [
            ("t_grid", &self.t_grid),
            ("x_grid", &self.x_grid),
            ("h_t_grid", &self.h_t_grid),
            ("h_x_grid", &self.h_x_grid),
        ] {
            UniformGrid::new(g.start, g.end, g.step).map_err(|e| ExperimentError::Config(format!("{name}: {e}")))?;
        }
        positive("l0", self.l0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmerioParams {
    pub horizon: f64,
    pub path_step: f64,
    pub initial_means: Vec<f64>,
}

impl Default for AmerioParams {
    fn default() -> Self {
        Self {
            horizon: 30.0,
            path_step: 0.1,
            initial_means: vec![-2.0, 0.0, 2.0, 4.0],
        }
    }
}

impl AmerioParams {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        positive("horizon", self.horizon)?;
        positive("path_step", self.path_step)?;
        finite("initial_means", &self.initial_means)?;
        if self.initial_means.len() < 2 {
            return Err(ExperimentError::Config("initial_means needs at least two entries".into()));
        }
        Ok(())
    }
}
