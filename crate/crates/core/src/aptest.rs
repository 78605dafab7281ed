//! Almost periodicity in distribution and asymptotic convergence of law
//! paths.
//!
//! For a path `t ↦ μ(t)` on a uniform grid the shift profile is
//! `D(τ) = max_t ρ(μ(t+τ), μ(t))` over the window of grid times `t` with
//! `t + τ_max` still on the grid. Detected periods are the local minima of
//! `D` that fall below `ε`; grid points on an exactly flat stretch are all
//! kept, so a constant path detects every scanned shift.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apfun::{density_verdict, max_gap};
use crate::measures::{
    discretize_laws, discretized_distance, discretized_upper_bound, Discretized, LawDistanceOptions, MeasureError, MeasurePath,
};
use crate::report::{fmt_num, CsvTable};

/// Default convergence threshold on the tail of `ρ(μ₁(t), μ₂(t))`.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-2;
/// Profile values at or below this are left out of the rate fit.
pub const FIT_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ApTestError {
    #[error("path too short: no t with t + {tau_max} on the grid")]
    WindowTooShort { tau_max: f64 },
    #[error("paths are not on a common grid")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ApVerdict {
    APEvidence,
    NoAPEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApTestOptions {
    pub distance: LawDistanceOptions,
    /// Restrict the base times `t` to this interval.
    pub t_window: Option<(f64, f64)>,
    /// Use every `t_stride`-th admissible base time.
    pub t_stride: usize,
}

impl Default for ApTestOptions {
    fn default() -> Self {
        Self {
            distance: LawDistanceOptions::default(),
            t_window: None,
            t_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApDistributionReport {
    pub epsilon: f64,
    pub scan: (f64, f64),
    pub tau_step: f64,
    /// `(τ, D(τ))` for every scanned shift.
    pub profile: Vec<(f64, f64)>,
    pub detected_periods: Vec<f64>,
    pub max_gap: f64,
    pub relatively_dense_within_scan: bool,
    pub verdict: ApVerdict,
    /// Base times actually used.
    pub t_window: (f64, f64),
    pub t_points: usize,
    pub subsampled: bool,
    /// Some distances are coupling upper bounds; detections stay valid.
    pub upper_bound: bool,
}

impl ApDistributionReport {
    /// `tau,D` rows.
    pub fn profile_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["tau", "D"]);
        for &(tau, d) in &self.profile {
            t.push(vec![fmt_num(tau), fmt_num(d)]);
        }
        t
    }
}

/// Grid index shift per scanned `τ`, or an error if `τ` is off the grid.
fn shift_indices(scan: (f64, f64), tau_step: f64, h: f64) -> Result<Vec<(f64, usize)>, ApTestError> {
    let (lo, hi) = scan;
    if !(tau_step > 0.0 && lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(ApTestError::InvalidArgument(
            "need 0 ≤ tau_min ≤ tau_max and tau_step > 0".into(),
        ));
    }
    let count = ((hi - lo) / tau_step + 1e-9).floor() as usize + 1;
    (0..count)
        .map(|k| {
            let tau = lo + k as f64 * tau_step;
            let s = (tau / h).round();
            if (s * h - tau).abs() > 1e-6 * h {
                return Err(ApTestError::InvalidArgument(format!(
                    "tau = {tau} is not a multiple of the path step {h}"
                )));
            }
            Ok((tau, s as usize))
        })
        .collect()
}

/// Indices of non-strict local minima of `d` below `epsilon`.
fn local_minima_below(d: &[f64], epsilon: f64) -> Vec<usize> {
    (0..d.len())
        .filter(|&k| {
            d[k] < epsilon && (k == 0 || d[k] <= d[k - 1]) && (k + 1 == d.len() || d[k] <= d[k + 1])
        })
        .collect()
}

pub fn ap_distribution_test(
    path: &MeasurePath,
    epsilon: f64,
    scan: (f64, f64),
    tau_step: f64,
) -> Result<ApDistributionReport, ApTestError> {
    ap_distribution_test_with(path, epsilon, scan, tau_step, &ApTestOptions::default())
}

pub fn ap_distribution_test_with(
    path: &MeasurePath,
    epsilon: f64,
    scan: (f64, f64),
    tau_step: f64,
    opts: &ApTestOptions,
) -> Result<ApDistributionReport, ApTestError> {
    if !(epsilon > 0.0) {
        return Err(ApTestError::InvalidArgument("epsilon must be positive".into()));
    }
    let h = path
        .uniform_step()
        .ok_or_else(|| ApTestError::InvalidArgument("path grid must be uniform with ≥ 2 points".into()))?;
    let shifts = shift_indices(scan, tau_step, h)?;
    let s_max = shifts.iter().map(|&(_, s)| s).max().unwrap_or(0);
    let times = path.times();
    let (w_lo, w_hi) = opts.t_window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let base: Vec<usize> = (0..times.len())
        .filter(|&k| k + s_max < times.len() && times[k] >= w_lo - 1e-9 && times[k] <= w_hi + 1e-9)
        .step_by(opts.t_stride.max(1))
        .collect();
    if base.is_empty() {
        return Err(ApTestError::WindowTooShort { tau_max: scan.1 });
    }
    // Only grid points some comparison touches need atoms.
    let mut needed = vec![false; times.len()];
    for &k in &base {
        needed[k] = true;
        for &(_, s) in &shifts {
            needed[k + s] = true;
        }
    }
    let laws: Vec<Option<Discretized>> = path
        .laws()
        .par_iter()
        .zip(needed.par_iter())
        .map(|(law, &need)| {
            if need {
                discretize_laws(std::slice::from_ref(law), &opts.distance).map(|mut v| v.pop())
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_, _>>()?;
    let get = |k: usize| laws[k].as_ref().expect("discretized above");

    // D(τ) is a max over t: visit base times by decreasing cheap upper bound
    // and stop once no remaining bound can beat the running max. Skipped
    // times cannot change the result.
    let rows: Vec<(f64, bool, bool)> = shifts
        .par_iter()
        .map(|&(_, s)| {
            let mut acc = (0.0f64, false, false);
            if s == 0 {
                return Ok(acc);
            }
            let mut order = base
                .iter()
                .map(|&k| Ok((discretized_upper_bound(get(k + s), get(k), &opts.distance)?, k)))
                .collect::<Result<Vec<_>, MeasureError>>()?;
            order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            for (bound, k) in order {
                if bound <= acc.0 {
                    break;
                }
                let r = discretized_distance(get(k + s), get(k), &opts.distance)?;
                acc.0 = acc.0.max(r.value);
                acc.1 |= r.subsampled;
                acc.2 |= r.upper_bound;
            }
            Ok(acc)
        })
        .collect::<Result<_, MeasureError>>()?;

    let d: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let detected: Vec<f64> = local_minima_below(&d, epsilon)
        .into_iter()
        .map(|k| shifts[k].0)
        .collect();
    let gap = max_gap(&detected, scan);
    let dense = density_verdict(&detected, scan, gap);
    Ok(ApDistributionReport {
        epsilon,
        scan,
        tau_step,
        profile: shifts.iter().map(|&(tau, _)| tau).zip(d.iter().copied()).collect(),
        detected_periods: detected,
        max_gap: gap,
        relatively_dense_within_scan: dense,
        verdict: if dense {
            ApVerdict::APEvidence
        } else {
            ApVerdict::NoAPEvidence
        },
        t_window: (times[base[0]], times[*base.last().expect("nonempty")]),
        t_points: base.len(),
        subsampled: rows.iter().any(|r| r.1),
        upper_bound: rows.iter().any(|r| r.2),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceOptions {
    pub threshold: f64,
    pub fit_floor: f64,
    pub distance: LawDistanceOptions,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            threshold: CONVERGENCE_THRESHOLD,
            fit_floor: FIT_FLOOR,
            distance: LawDistanceOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `(t, ρ(μ₁(t), μ₂(t)))`.
    pub profile: Vec<(f64, f64)>,
    pub tail_window: (f64, f64),
    pub tail_max: f64,
    pub converged: bool,
    /// Least-squares slope of `ln ρ` over profile points above the floor;
    /// `None` with fewer than two such points.
    pub fitted_rate: Option<f64>,
    pub threshold: f64,
    pub fit_floor: f64,
    pub upper_bound: bool,
}

impl ConvergenceReport {
    pub fn profile_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["t", "rho"]);
        for &(s, r) in &self.profile {
            t.push(vec![fmt_num(s), fmt_num(r)]);
        }
        t
    }
}

fn same_grid(a: &MeasurePath, b: &MeasurePath) -> bool {
    a.len() == b.len()
        && a.dim() == b.dim()
        && a.times()
            .iter()
            .zip(b.times())
            .all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()))
}

/// Least-squares slope of `y` against `x`.
fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn asymptotic_convergence_test(
    path1: &MeasurePath,
    path2: &MeasurePath,
    tail_window: (f64, f64),
) -> Result<ConvergenceReport, ApTestError> {
    asymptotic_convergence_test_with(path1, path2, tail_window, &ConvergenceOptions::default())
}

pub fn asymptotic_convergence_test_with(
    path1: &MeasurePath,
    path2: &MeasurePath,
    tail_window: (f64, f64),
    opts: &ConvergenceOptions,
) -> Result<ConvergenceReport, ApTestError> {
    if !same_grid(path1, path2) {
        return Err(ApTestError::GridMismatch);
    }
    let times = path1.times();
    let (lo, hi) = tail_window;
    if !(lo <= hi && lo >= times[0] - 1e-9 && hi <= times[times.len() - 1] + 1e-9) {
        return Err(ApTestError::InvalidArgument("tail window must lie inside the grid".into()));
    }
    let rows: Vec<(f64, bool)> = (0..times.len())
        .into_par_iter()
        .map(|k| {
            let pair = [path1.laws()[k].clone(), path2.laws()[k].clone()];
            let d = discretize_laws(&pair, &opts.distance)?;
            let r = discretized_distance(&d[0], &d[1], &opts.distance)?;
            Ok((r.value, r.upper_bound))
        })
        .collect::<Result<_, MeasureError>>()?;
    let profile: Vec<(f64, f64)> = times.iter().copied().zip(rows.iter().map(|r| r.0)).collect();
    let tail: Vec<f64> = profile
        .iter()
        .filter(|(t, _)| *t >= lo - 1e-9 && *t <= hi + 1e-9)
        .map(|p| p.1)
        .collect();
    if tail.is_empty() {
        return Err(ApTestError::InvalidArgument("tail window contains no grid point".into()));
    }
    let tail_max = tail.iter().copied().fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = profile
        .iter()
        .filter(|(_, r)| *r > opts.fit_floor)
        .map(|&(t, r)| (t, r.ln()))
        .unzip();
    Ok(ConvergenceReport {
        tail_window,
        tail_max,
        converged: tail_max < opts.threshold,
        fitted_rate: ls_slope(&xs, &ys),
        threshold: opts.threshold,
        fit_floor: opts.fit_floor,
        upper_bound: rows.iter().any(|r| r.1),
        profile,
    })
}
