//! Separation criteria: the scalar Favard check, Lyapunov hypotheses and
//! their two sufficient corollary conditions, and the pairwise separation
//! estimate for families of law paths.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apfun::QpFunction;
use crate::measures::{discretize_laws, discretized_distance, LawDistanceOptions, MeasureError, MeasurePath};
use crate::momentflow::{propagate_moments, step_limit, MomentError};
use crate::report::{fmt_num, CsvTable};
use crate::sde::{Expression, LinearSdeModel, SdeModel};

/// Relative tolerance of the finite-difference cross-check.
pub const DERIVATIVE_REL_TOL: f64 = 1e-4;
/// Absolute slack of the finite-difference cross-check.
pub const DERIVATIVE_ABS_TOL: f64 = 1e-6;
/// `|V(t, 0)|` below this counts as zero.
pub const ORIGIN_TOL: f64 = 1e-10;
/// Slack on `min_ratio ≥ L0`.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Pairs whose infimum falls below this are flagged as not separated.
pub const SEPARATION_THRESHOLD: f64 = 1e-2;
/// Growth of the primitive's range under doubling still read as bounded.
pub const FAVARD_STABLE_GROWTH: f64 = 1.05;
/// Growth of the primitive's range under doubling read as unbounded.
pub const FAVARD_UNBOUNDED_GROWTH: f64 = 1.5;
/// Horizon cap of the moment-flow diagnostics for `d > 1`.
pub const FAVARD_FLOW_HORIZON: f64 = 50.0;

/// What a separation matrix does and does not establish.
pub const AMERIO_SCOPE_NOTE: &str = "infima over the supplied paths on a finite window of the half-line; \
     other bounded solutions and other hull equations are not inspected";

#[derive(Debug, Error)]
pub enum SeparationError {
    #[error("{what} of {name} at t = {t}: supplied {supplied}, finite difference {finite_difference}")]
    DerivativeMismatch {
        name: String,
        what: String,
        t: f64,
        supplied: f64,
        finite_difference: f64,
    },
    #[error("dimension error: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Moment(#[from] MomentError),
}

/// `start, start + step, …` up to `end` (inclusive up to rounding).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl UniformGrid {
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self, SeparationError> {
        if !(start.is_finite() && end.is_finite() && step > 0.0 && end >= start) {
            return Err(SeparationError::InvalidArgument(format!(
                "grid [{start}, {end}] with step {step}"
            )));
        }
        Ok(Self { start, end, step })
    }

    /// `[0, 200]` at `0.01`, the corollary default.
    pub fn corollary_time() -> Self {
        Self {
            start: 0.0,
            end: 200.0,
            step: 0.01,
        }
    }

    /// `[−10, 10]` at `0.1`.
    pub fn state() -> Self {
        Self {
            start: -10.0,
            end: 10.0,
            step: 0.1,
        }
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.start + k as f64 * self.step).collect()
    }
}

/// Index of the smallest value, ties to the smallest index; NaN counts as
/// `−∞` so that it surfaces as a witness.
fn argmin(values: impl IntoIterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        let v = if v.is_nan() { f64::NEG_INFINITY } else { v };
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best
}

// ---------------------------------------------------------------- Favard

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FavardOutcome {
    VacuouslyHolds,
    Holds,
    Fails,
    Inconclusive,
}

/// Second-moment flow of the homogeneous equation from `S(0) = I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousFlowDiagnostics {
    pub horizon: f64,
    pub trace_min: f64,
    pub trace_max: f64,
    pub trace_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FavardVerdict {
    pub verdict: FavardOutcome,
    /// Mean of `q = 2A + ΣBᵢ²`.
    pub mean_q: f64,
    /// Extremes of `Q(t) = ∫₀ᵗ q` on `[−scan_t, scan_t]`.
    pub primitive_sup: f64,
    pub primitive_inf: f64,
    /// The same on `[−2·scan_t, 2·scan_t]`.
    pub doubled_sup: f64,
    pub doubled_inf: f64,
    pub scan_t: f64,
    pub tol: f64,
    pub sample_step: f64,
    pub diagnostics: Option<HomogeneousFlowDiagnostics>,
}

fn primitive_range(q: &QpFunction, half_width: f64, step: f64) -> (f64, f64) {
    let n = (half_width / step).ceil() as i64;
    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for k in -n..=n {
        let t = (k as f64 * step).clamp(-half_width, half_width);
        let v = q.primitive(t);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Favard check for `dX = A(t)X dt + Σ Bᵢ(t)X dWᵢ` in one dimension, where
/// `E X² = P(0)·exp(Q(t))` with `Q' = 2A + ΣBᵢ²`.
pub fn favard_scalar_check(
    a: &QpFunction,
    b: &[QpFunction],
    scan_t: f64,
    tol: f64,
) -> Result<FavardVerdict, SeparationError> {
    if !(scan_t > 0.0 && scan_t.is_finite() && tol > 0.0) {
        return Err(SeparationError::InvalidArgument(format!("scan_t = {scan_t}, tol = {tol}")));
    }
    let q = b.iter().fold(a.scale(2.0), |acc, bi| acc.add(&bi.mul(bi))).normalized();
    let mean_q = q.mean();
    let step = 0.01 / q.max_frequency().max(1.0);
    let (lo1, hi1) = primitive_range(&q, scan_t, step);
    let (lo2, hi2) = primitive_range(&q, 2.0 * scan_t, step);
    let (r1, r2) = (hi1 - lo1, hi2 - lo2);
    let verdict = if mean_q.abs() > tol {
        FavardOutcome::VacuouslyHolds
    } else if r2 <= FAVARD_STABLE_GROWTH * r1 + 1e-9 {
        FavardOutcome::Holds
    } else if r2 >= FAVARD_UNBOUNDED_GROWTH * r1 + 1e-9 {
        FavardOutcome::Fails
    } else {
        FavardOutcome::Inconclusive
    };
    Ok(FavardVerdict {
        verdict,
        mean_q,
        primitive_sup: hi1,
        primitive_inf: lo1,
        doubled_sup: hi2,
        doubled_inf: lo2,
        scan_t,
        tol,
        sample_step: step,
        diagnostics: None,
    })
}

/// Favard check of the homogeneous part of a linear model. Scalar models
/// use the exact reduction; for `d > 1` the verdict is `Inconclusive` and
/// the second-moment flow from the identity is reported instead.
pub fn favard_check(model: &LinearSdeModel, scan_t: f64, tol: f64) -> Result<FavardVerdict, SeparationError> {
    if model.dim() == 1 {
        let b: Vec<QpFunction> = model.b().iter().map(|bi| bi.get(0, 0).clone()).collect();
        return favard_scalar_check(model.a().get(0, 0), &b, scan_t, tol);
    }
    if !(scan_t > 0.0 && scan_t.is_finite() && tol > 0.0) {
        return Err(SeparationError::InvalidArgument(format!("scan_t = {scan_t}, tol = {tol}")));
    }
    let d = model.dim();
    let hom = model.homogeneous();
    let horizon = scan_t.min(FAVARD_FLOW_HORIZON);
    let mut s0 = vec![0.0; d * d];
    for i in 0..d {
        s0[i * d + i] = 1.0;
    }
    let flow = propagate_moments(&hom, &vec![0.0; d], &s0, 0.0, horizon, step_limit(&hom))?;
    let traces = flow.traces();
    Ok(FavardVerdict {
        verdict: FavardOutcome::Inconclusive,
        mean_q: f64::NAN,
        primitive_sup: f64::NAN,
        primitive_inf: f64::NAN,
        doubled_sup: f64::NAN,
        doubled_inf: f64::NAN,
        scan_t,
        tol,
        sample_step: f64::NAN,
        diagnostics: Some(HomogeneousFlowDiagnostics {
            horizon,
            trace_min: traces.iter().copied().fold(f64::INFINITY, f64::min),
            trace_max: traces.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            trace_end: *traces.last().unwrap_or(&f64::NAN),
        }),
    })
}

// ---------------------------------------------------------------- Lyapunov

/// A candidate `V(t, x)` with its exact derivatives.
pub trait LyapunovFunction: Sync {
    fn name(&self) -> String;
    fn value(&self, t: f64, x: &[f64]) -> f64;
    /// `∂V/∂t`.
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Row-major `d×d`.
    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]);
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `|x|²·exp(arctan t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticArctan;

impl LyapunovFunction for QuadraticArctan {
    fn name(&self) -> String {
        "|x|^2 exp(arctan t)".into()
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        norm_sq(x) * t.atan().exp()
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.value(t, x) / (1.0 + t * t)
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let e = t.atan().exp();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = 2.0 * xi * e;
        }
    }

    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, e) = (x.len(), t.atan().exp());
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = 2.0 * e;
        }
    }
}

/// `ln(|x|² + 1)·exp(arctan t)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogArctan;

impl LyapunovFunction for LogArctan {
    fn name(&self) -> String {
        "ln(|x|^2 + 1) exp(arctan t)".into()
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        norm_sq(x).ln_1p() * t.atan().exp()
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.value(t, x) / (1.0 + t * t)
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let s = 2.0 * t.atan().exp() / (norm_sq(x) + 1.0);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = s * xi;
        }
    }

    fn hessian(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (d, e) = (x.len(), t.atan().exp());
        let r1 = norm_sq(x) + 1.0;
        for i in 0..d {
            for j in 0..d {
                let diag = if i == j { 2.0 / r1 } else { 0.0 };
                out[i * d + j] = e * (diag - 4.0 * x[i] * x[j] / (r1 * r1));
            }
        }
    }
}

/// `V ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroLyapunov;

impl LyapunovFunction for ZeroLyapunov {
    fn name(&self) -> String {
        "0".into()
    }

    fn value(&self, _: f64, _: &[f64]) -> f64 {
        0.0
    }

    fn time_derivative(&self, _: f64, _: &[f64]) -> f64 {
        0.0
    }

    fn gradient(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hessian(&self, _: f64, _: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

fn fd_step(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

fn compare(v: &dyn LyapunovFunction, what: String, t: f64, supplied: f64, fd: f64) -> Result<(), SeparationError> {
    if (supplied - fd).abs() <= DERIVATIVE_REL_TOL * fd.abs() + DERIVATIVE_ABS_TOL {
        Ok(())
    } else {
        Err(SeparationError::DerivativeMismatch {
            name: v.name(),
            what,
            t,
            supplied,
            finite_difference: fd,
        })
    }
}

/// Checks the supplied `∂ₜV`, gradient and Hessian of `v` at `(t, x)`
/// against central differences (the Hessian against differences of the
/// already checked gradient).
pub fn validate_derivatives(v: &dyn LyapunovFunction, t: f64, x: &[f64]) -> Result<(), SeparationError> {
    let d = x.len();
    let ht = fd_step(t);
    let fd_t = (v.value(t + ht, x) - v.value(t - ht, x)) / (2.0 * ht);
    compare(v, "time derivative".into(), t, v.time_derivative(t, x), fd_t)?;

    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    v.gradient(t, x, &mut grad);
    v.hessian(t, x, &mut hess);
    let mut xp = x.to_vec();
    for i in 0..d {
        let h = fd_step(x[i]);
        xp[i] = x[i] + h;
        let vp = v.value(t, &xp);
        v.gradient(t, &xp, &mut gp);
        xp[i] = x[i] - h;
        let vm = v.value(t, &xp);
        v.gradient(t, &xp, &mut gm);
        xp[i] = x[i];
        compare(v, format!("gradient[{i}]"), t, grad[i], (vp - vm) / (2.0 * h))?;
        for j in 0..d {
            compare(v, format!("hessian[{j},{i}]"), t, hess[j * d + i], (gp[j] - gm[j]) / (2.0 * h))?;
        }
    }
    Ok(())
}

/// Generator term with the drift and diffusion differences already formed:
/// `V_t + Σ Δfᵢ V_{xᵢ} + ½ Σₗ Σᵢⱼ Δg_{il} V_{xᵢxⱼ} Δg_{jl}`, all at `(t, z)`.
fn generator(v: &dyn LyapunovFunction, t: f64, z: &[f64], df: &[f64], dg: &[f64], m: usize, buf: &mut [f64]) -> f64 {
    let d = z.len();
    let (grad, hess) = buf.split_at_mut(d);
    v.gradient(t, z, grad);
    v.hessian(t, z, &mut hess[..d * d]);
    let mut s = v.time_derivative(t, z);
    for i in 0..d {
        s += df[i] * grad[i];
    }
    let mut q = 0.0;
    for l in 0..m {
        for i in 0..d {
            for j in 0..d {
                q += dg[i * m + l] * hess[i * d + j] * dg[j * m + l];
            }
        }
    }
    s + 0.5 * q
}

fn lv_unchecked(v: &dyn LyapunovFunction, model: &SdeModel, t: f64, x: &[f64], y: &[f64]) -> f64 {
    let (d, m) = (model.dim(), model.noise_dim());
    let (fx, gx) = model.coefficients_at(t, x);
    let (fy, gy) = model.coefficients_at(t, y);
    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
    let mut buf = vec![0.0; d + d * d];
    generator(v, t, &z, &df, &dg, m, &mut buf)
}

/// `LV(t, x − y)` for the pair `(x, y)` under `model`, after cross-checking
/// the derivatives of `v` at `(t, x − y)`.
pub fn lyapunov_lv(
    v: &dyn LyapunovFunction,
    model: &SdeModel,
    t: f64,
    x: &[f64],
    y: &[f64],
) -> Result<f64, SeparationError> {
    let d = model.dim();
    for p in [x, y] {
        if p.len() != d {
            return Err(SeparationError::Dimension { expected: d, got: p.len() });
        }
    }
    let z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    validate_derivatives(v, t, &z)?;
    Ok(lv_unchecked(v, model, t, x, y))
}

/// A grid point at which a reported extreme is attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub value: f64,
}

/// Constant of a sufficient corollary condition that produced the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CorollaryConstant {
    /// `2A + ΣBᵢ² ≥ c`.
    Linear { c: f64 },
    /// `(f(t,x) − f(t,y))(x − y) ≥ L0 (x − y)²`.
    Monotone { l0: f64 },
}

/// Grids of a hypothesis check: times, and one coordinate axis whose
/// `d`-fold product gives the states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HGrid {
    pub t: UniformGrid,
    pub x: UniformGrid,
}

impl Default for HGrid {
    fn default() -> Self {
        Self {
            t: UniformGrid {
                start: 0.0,
                end: 200.0,
                step: 0.1,
            },
            x: UniformGrid {
                start: -10.0,
                end: 10.0,
                step: 0.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub v: String,
    pub pass: bool,
    /// `min LV(t, x − y) − a(|x − y|)` over the grid.
    pub h0_min_margin: f64,
    pub h0_witness: Witness,
    pub h1_ok: bool,
    /// `min V(t, x)` over `x ≠ 0`.
    pub h1_min_value: f64,
    pub h1_witness: Witness,
    /// `max |V(t, 0)|`.
    pub h1_origin_max: f64,
    pub h1_origin_witness: Witness,
    pub h2_ok: bool,
    /// `max V(t, x) − b|x|² − c`.
    pub h2_max_excess: f64,
    pub h2_witness: Witness,
    pub b: f64,
    pub c: f64,
    /// `a(0) = 0` and `a > 0` on every grid distance.
    pub gap_ok: bool,
    /// `a` at the largest grid distance.
    pub gap_at_boundary: f64,
    pub grid: HGrid,
    pub corollary: Option<CorollaryConstant>,
}

fn product_grid(axis: &[f64], d: usize) -> Vec<Vec<f64>> {
    let n = axis.len();
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut k| {
            let mut p = vec![0.0; d];
            for c in (0..d).rev() {
                p[c] = axis[k % n];
                k /= n;
            }
            p
        })
        .collect()
}

/// Checks (h0)–(h2) for `v` on the grid: `LV ≥ a(|x − y|)`, `V(t, 0) = 0`
/// with `V > 0` elsewhere, and `V ≤ b|x|² + c`.
pub fn check_h_conditions(
    v: &dyn LyapunovFunction,
    gap: &(dyn Fn(f64) -> f64 + Sync),
    b: f64,
    c: f64,
    model: &SdeModel,
    grid: &HGrid,
) -> Result<LyapunovReport, SeparationError> {
    let (d, m) = (model.dim(), model.noise_dim());
    let ts = grid.t.points();
    let axis = grid.x.points();
    let states = product_grid(&axis, d);
    if states.len() > 1 << 16 {
        return Err(SeparationError::InvalidArgument(format!(
            "{} grid states; coarsen the state grid",
            states.len()
        )));
    }
    let n = states.len();

    // cross-check once, at grid corners
    let span: Vec<f64> = states[n - 1].iter().zip(&states[0]).map(|(a, b)| a - b).collect();
    for &t in [ts[0], ts[ts.len() / 2], ts[ts.len() - 1]].iter() {
        validate_derivatives(v, t, &span)?;
        validate_derivatives(v, t, &states[n / 2 + n / 4])?;
    }

    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let diffs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(i, j)| states[i].iter().zip(&states[j]).map(|(a, b)| a - b).collect())
        .collect();
    let gaps: Vec<f64> = diffs.iter().map(|z| gap(norm_sq(z).sqrt())).collect();
    let gap_ok = gap(0.0).abs() <= 1e-12
        && diffs.iter().zip(&gaps).all(|(z, &a)| norm_sq(z) == 0.0 || a > 0.0);
    let far = argmin(diffs.iter().map(|z| -norm_sq(z))).map(|(k, _)| k).unwrap_or(0);
    let gap_at_boundary = gaps[far];

    let per_t: Vec<(usize, f64)> = ts
        .par_iter()
        .map(|&t| {
            let mut f = vec![0.0; n * d];
            let mut g = vec![0.0; n * d * m];
            for (k, s) in states.iter().enumerate() {
                let (fk, gk) = model.coefficients_at(t, s);
                f[k * d..(k + 1) * d].copy_from_slice(&fk);
                g[k * d * m..(k + 1) * d * m].copy_from_slice(&gk);
            }
            let mut buf = vec![0.0; d + d * d];
            let mut df = vec![0.0; d];
            let mut dg = vec![0.0; d * m];
            let margins = pairs.iter().enumerate().map(|(p, &(i, j))| {
                for r in 0..d {
                    df[r] = f[i * d + r] - f[j * d + r];
                }
                for r in 0..d * m {
                    dg[r] = g[i * d * m + r] - g[j * d * m + r];
                }
                generator(v, t, &diffs[p], &df, &dg, m, &mut buf) - gaps[p]
            });
            argmin(margins.collect::<Vec<_>>()).expect("nonempty grid")
        })
        .collect();
    let (ti, h0_min_margin) = argmin(per_t.iter().map(|p| p.1)).expect("nonempty grid");
    let (i, j) = pairs[per_t[ti].0];
    let h0_witness = Witness {
        t: ts[ti],
        x: states[i].clone(),
        y: states[j].clone(),
        value: h0_min_margin,
    };

    let origin = vec![0.0; d];
    let at = |k: usize| (ts[k / n], &states[k % n]);
    let total = ts.len() * n;
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|k| {
            let (t, x) = at(k);
            v.value(t, x)
        })
        .collect();
    let nonzero = |k: usize| norm_sq(&states[k % n]) > 0.0;
    let (k1, h1_min_value) = argmin(
        (0..total).map(|k| if nonzero(k) { values[k] } else { f64::INFINITY }),
    )
    .expect("nonempty grid");
    let (ko, neg_origin) = argmin(ts.iter().map(|&t| -v.value(t, &origin).abs())).expect("nonempty grid");
    let h1_origin_max = -neg_origin;
    let h1_ok = h1_min_value > 0.0 && h1_origin_max < ORIGIN_TOL;
    let (k2, neg_excess) = argmin((0..total).map(|k| -(values[k] - b * norm_sq(&states[k % n]) - c))).expect("nonempty grid");
    let h2_max_excess = -neg_excess;
    let h2_ok = h2_max_excess <= 0.0;

    let witness = |k: usize, value: f64| {
        let (t, x) = at(k);
        Witness {
            t,
            x: x.clone(),
            y: origin.clone(),
            value,
        }
    };
    Ok(LyapunovReport {
        v: v.name(),
        pass: h0_min_margin >= 0.0 && h1_ok && h2_ok && gap_ok,
        h0_min_margin,
        h0_witness,
        h1_ok,
        h1_min_value,
        h1_witness: witness(k1, h1_min_value),
        h1_origin_max,
        h1_origin_witness: Witness {
            t: ts[ko],
            x: origin.clone(),
            y: origin.clone(),
            value: h1_origin_max,
        },
        h2_ok,
        h2_max_excess,
        h2_witness: witness(k2, h2_max_excess),
        b,
        c,
        gap_ok,
        gap_at_boundary,
        grid: *grid,
        corollary: None,
    })
}

/// Re-evaluates the margin of an (h0) witness.
pub fn h0_margin_at(
    v: &dyn LyapunovFunction,
    gap: &dyn Fn(f64) -> f64,
    model: &SdeModel,
    w: &Witness,
) -> f64 {
    let r = w.x.iter().zip(&w.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    lv_unchecked(v, model, w.t, &w.x, &w.y) - gap(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCorollary {
    /// `min 2A(t) + ΣBᵢ(t)²` over the grid.
    pub c_est: f64,
    pub argmin_t: f64,
    pub pass: bool,
    pub grid: UniformGrid,
}

/// Sufficient condition `2A + ΣBᵢ² ≥ c > 0` for a scalar linear model.
pub fn corollary_linear_check(model: &LinearSdeModel, t_grid: &UniformGrid) -> Result<LinearCorollary, SeparationError> {
    if model.dim() != 1 {
        return Err(SeparationError::Dimension {
            expected: 1,
            got: model.dim(),
        });
    }
    let a = model.a().get(0, 0);
    let bs: Vec<&QpFunction> = model.b().iter().map(|b| b.get(0, 0)).collect();
    let ts = t_grid.points();
    let q: Vec<f64> = ts
        .par_iter()
        .map(|&t| 2.0 * a.eval(t) + bs.iter().map(|b| b.eval(t).powi(2)).sum::<f64>())
        .collect();
    let (k, c_est) = argmin(q).expect("nonempty grid");
    Ok(LinearCorollary {
        c_est,
        argmin_t: ts[k],
        pass: c_est > 0.0,
        grid: *t_grid,
    })
}

/// Canonical (h0)–(h2) check behind the linear corollary:
/// `V = x²·exp(arctan t)`, `a(r) = c·e^{−π/2}·r²`, `b = e^{π/2}`, `c = 0`.
pub fn linear_corollary_h_check(
    model: &LinearSdeModel,
    c_est: f64,
    grid: &HGrid,
) -> Result<LyapunovReport, SeparationError> {
    let scale = c_est * (-FRAC_PI_2).exp();
    let gap = move |r: f64| scale * r * r;
    let sde = SdeModel::Linear(model.clone());
    let mut rep = check_h_conditions(&QuadraticArctan, &gap, FRAC_PI_2.exp(), 0.0, &sde, grid)?;
    rep.corollary = Some(CorollaryConstant::Linear { c: c_est });
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCorollary {
    /// `min (f(t,x) − f(t,y))/(x − y)` over the grid.
    pub min_ratio: f64,
    pub witness: Witness,
    pub l0: f64,
    pub pass: bool,
    pub t_grid: UniformGrid,
    pub x_grid: UniformGrid,
}

/// Sufficient condition `(f(t,x) − f(t,y))(x − y) ≥ L0 (x − y)²` for a
/// scalar drift. Only neighbouring grid points are compared: the slope over
/// any pair is a weighted mean of the neighbouring slopes between them, so
/// the minimum over all pairs is attained at a neighbouring one.
pub fn corollary_monotone_check(
    drift: &Expression,
    coefficients: &[(String, QpFunction)],
    l0: f64,
    t_grid: &UniformGrid,
    x_grid: &UniformGrid,
) -> Result<MonotoneCorollary, SeparationError> {
    if drift.max_state_index() > 1 {
        return Err(SeparationError::Dimension {
            expected: 1,
            got: drift.max_state_index(),
        });
    }
    if !(l0 > 0.0) {
        return Err(SeparationError::InvalidArgument(format!("L0 = {l0}")));
    }
    let xs = x_grid.points();
    if xs.len() < 2 {
        return Err(SeparationError::InvalidArgument("x grid needs two points".into()));
    }
    let ts = t_grid.points();
    let per_t: Vec<(usize, f64)> = ts
        .par_iter()
        .map(|&t| {
            let cv: Vec<f64> = coefficients.iter().map(|(_, q)| q.eval(t)).collect();
            let f: Vec<f64> = xs.iter().map(|&x| drift.eval(t, &[x], &cv)).collect();
            argmin((0..xs.len() - 1).map(|i| (f[i + 1] - f[i]) / (xs[i + 1] - xs[i]))).expect("two points")
        })
        .collect();
    let (ti, min_ratio) = argmin(per_t.iter().map(|p| p.1)).expect("nonempty grid");
    let xi = per_t[ti].0;
    Ok(MonotoneCorollary {
        min_ratio,
        witness: Witness {
            t: ts[ti],
            x: vec![xs[xi + 1]],
            y: vec![xs[xi]],
            value: min_ratio,
        },
        l0,
        pass: min_ratio >= l0 - MONOTONE_TOL,
        t_grid: *t_grid,
        x_grid: *x_grid,
    })
}

// ---------------------------------------------------------------- Amerio

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfLine {
    Positive,
    Negative,
}

impl HalfLine {
    fn contains(self, t: f64) -> bool {
        match self {
            HalfLine::Positive => t >= 0.0,
            HalfLine::Negative => t <= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationMatrix {
    pub labels: Vec<String>,
    pub half_line: HalfLine,
    /// Row-major `n×n` infima of `ρ` over the half-line part of the grid.
    pub values: Vec<f64>,
    /// Time of each infimum (row-major, `NaN` on the diagonal).
    pub argmin_times: Vec<f64>,
    pub window: (f64, f64),
    pub threshold: f64,
    /// Pairs `(i, j)`, `i < j`, with infimum below the threshold.
    pub not_separated: Vec<(usize, usize)>,
    pub subsampled: bool,
    pub upper_bound: bool,
    pub note: String,
}

impl SeparationMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn csv_table(&self) -> CsvTable {
        let mut t = CsvTable::new(std::iter::once("path".to_string()).chain(self.labels.iter().cloned()));
        let n = self.len();
        for i in 0..n {
            let mut row = vec![self.labels[i].clone()];
            row.extend((0..n).map(|j| fmt_num(self.get(i, j))));
            t.push(row);
        }
        t
    }
}

/// Pairwise `inf ρ(μᵢ(t), μⱼ(t))` over the grid times on one half-line.
pub fn amerio_separation_estimate(
    labels: &[String],
    paths: &[MeasurePath],
    half_line: HalfLine,
    opts: &LawDistanceOptions,
) -> Result<SeparationMatrix, SeparationError> {
    if paths.len() < 2 || labels.len() != paths.len() {
        return Err(SeparationError::InvalidArgument(format!(
            "{} paths with {} labels; need at least two",
            paths.len(),
            labels.len()
        )));
    }
    let times = paths[0].times();
    for p in &paths[1..] {
        let same = p.times().len() == times.len()
            && p.times().iter().zip(times).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
        if !same {
            return Err(SeparationError::GridMismatch("paths are not on a common time grid".into()));
        }
        if p.dim() != paths[0].dim() {
            return Err(SeparationError::GridMismatch("paths differ in dimension".into()));
        }
    }
    let idx: Vec<usize> = (0..times.len()).filter(|&k| half_line.contains(times[k])).collect();
    if idx.is_empty() {
        return Err(SeparationError::GridMismatch(format!(
            "no grid time on the {half_line:?} half-line"
        )));
    }
    let disc: Vec<Vec<_>> = paths
        .iter()
        .map(|p| {
            let laws: Vec<_> = idx.iter().map(|&k| p.laws()[k].clone()).collect();
            discretize_laws(&laws, opts)
        })
        .collect::<Result<_, _>>()?;
    let n = paths.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<(usize, f64, bool, bool)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut vals = Vec::with_capacity(idx.len());
            let (mut sub, mut ub) = (false, false);
            for k in 0..idx.len() {
                let r = discretized_distance(&disc[i][k], &disc[j][k], opts)?;
                sub |= r.subsampled;
                ub |= r.upper_bound;
                vals.push(r.value);
            }
            let (k, v) = argmin(vals).expect("nonempty window");
            Ok((k, v, sub, ub))
        })
        .collect::<Result<_, MeasureError>>()?;
    let mut values = vec![0.0; n * n];
    let mut argmin_times = vec![f64::NAN; n * n];
    let mut not_separated = Vec::new();
    let (mut subsampled, mut upper_bound) = (false, false);
    for (&(i, j), &(k, v, sub, ub)) in pairs.iter().zip(&results) {
        values[i * n + j] = v;
        values[j * n + i] = v;
        argmin_times[i * n + j] = times[idx[k]];
        argmin_times[j * n + i] = times[idx[k]];
        if v < SEPARATION_THRESHOLD {
            not_separated.push((i, j));
        }
        subsampled |= sub;
        upper_bound |= ub;
    }
    Ok(SeparationMatrix {
        labels: labels.to_vec(),
        half_line,
        values,
        argmin_times,
        window: (times[idx[0]], times[*idx.last().expect("nonempty")]),
        threshold: SEPARATION_THRESHOLD,
        not_separated,
        subsampled,
        upper_bound,
        note: AMERIO_SCOPE_NOTE.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{EmpiricalMeasure, Law};
    use crate::sde::{NonlinearSdeModel, Scope};

    fn qp(s: f64, c: f64, w: f64) -> QpFunction {
        QpFunction::constant(s).add(&QpFunction::cosine(c, w, 0.0).unwrap())
    }

    fn scalar(a: QpFunction, b: Vec<QpFunction>) -> LinearSdeModel {
        let g = vec![QpFunction::zero(); b.len()];
        LinearSdeModel::scalar(a, QpFunction::zero(), b, g).unwrap()
    }

    #[test]
    fn favard_examples() {
        let v = favard_scalar_check(&QpFunction::constant(-1.0), &[], 100.0, 1e-6).unwrap();
        assert_eq!(v.verdict, FavardOutcome::VacuouslyHolds);
        assert_eq!(v.mean_q, -2.0);
        let v = favard_scalar_check(&QpFunction::cosine(0.5, 1.0, 0.0).unwrap(), &[], 100.0, 1e-6).unwrap();
        assert_eq!(v.verdict, FavardOutcome::Holds);
        assert!((v.primitive_sup - 1.0).abs() < 1e-6 && (v.primitive_inf + 1.0).abs() < 1e-6);
        let v = favard_scalar_check(&QpFunction::zero(), &[], 100.0, 1e-6).unwrap();
        assert_eq!(v.verdict, FavardOutcome::Holds);
        assert_eq!((v.primitive_sup, v.primitive_inf), (0.0, 0.0));
        // A = −½, B = 1: q ≡ 0
        let v = favard_scalar_check(&QpFunction::constant(-0.5), &[QpFunction::constant(1.0)], 100.0, 1e-6).unwrap();
        assert_eq!(v.verdict, FavardOutcome::Holds);
        // slow drift inside the tolerance reads as unbounded
        let v = favard_scalar_check(&QpFunction::constant(1e-4), &[], 100.0, 1e-3).unwrap();
        assert_eq!(v.verdict, FavardOutcome::Fails);
        assert!(favard_scalar_check(&QpFunction::zero(), &[], 0.0, 1e-6).is_err());
    }

    #[test]
    fn favard_in_higher_dimension_is_inconclusive() {
        use crate::apfun::QpMatrix;
        let a = QpMatrix::from_constants(2, 2, &[-1.0, 0.0, 0.0, -1.0]).unwrap();
        let model = LinearSdeModel::new(a, QpMatrix::zeros(2, 1), vec![], vec![]).unwrap();
        let v = favard_check(&model, 10.0, 1e-6).unwrap();
        assert_eq!(v.verdict, FavardOutcome::Inconclusive);
        let diag = v.diagnostics.unwrap();
        assert!((diag.trace_end - 2.0 * (-20.0f64).exp()).abs() < 1e-9);
        assert_eq!(diag.trace_max, 2.0);
    }

    #[test]
    fn canonical_derivatives_are_consistent() {
        for v in [&QuadraticArctan as &dyn LyapunovFunction, &LogArctan, &ZeroLyapunov] {
            for &(t, x) in &[(0.0, [1.0, -2.0]), (3.5, [0.1, 0.0]), (-7.0, [4.0, 3.0])] {
                validate_derivatives(v, t, &x).unwrap();
            }
        }
    }

    struct WrongGradient;

    impl LyapunovFunction for WrongGradient {
        fn name(&self) -> String {
            "wrong".into()
        }
        fn value(&self, _: f64, x: &[f64]) -> f64 {
            norm_sq(x)
        }
        fn time_derivative(&self, _: f64, _: &[f64]) -> f64 {
            0.0
        }
        fn gradient(&self, _: f64, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(x);
        }
        fn hessian(&self, _: f64, x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
            out[0] = 1.0;
            let _ = x;
        }
    }

    #[test]
    fn lv_examples() {
        let model = SdeModel::Linear(scalar(QpFunction::constant(1.0), vec![QpFunction::constant(1.0)]));
        let lv = lyapunov_lv(&QuadraticArctan, &model, 0.0, &[1.5], &[0.5]).unwrap();
        assert!((lv - 4.0).abs() < 1e-12);
        // x = y leaves V_t(t, 0)
        let lv = lyapunov_lv(&LogArctan, &model, 2.0, &[0.3], &[0.3]).unwrap();
        assert_eq!(lv, 0.0);

        let coefs = vec![];
        let scope = Scope {
            dim: 1,
            coefficients: &coefs,
        };
        let drift = vec![Expression::parse("x1", &scope).unwrap()];
        let nl = NonlinearSdeModel::new(1, 0, coefs.clone(), drift, vec![], 1.0, 1.0).unwrap();
        let lv = lyapunov_lv(&LogArctan, &SdeModel::Nonlinear(nl), 0.0, &[1.0], &[0.0]).unwrap();
        assert!((lv - (2f64.ln() + 1.0)).abs() < 1e-12);

        let err = lyapunov_lv(&WrongGradient, &model, 0.0, &[1.0], &[0.0]).unwrap_err();
        assert!(matches!(err, SeparationError::DerivativeMismatch { .. }));
    }

    fn small_grid() -> HGrid {
        HGrid {
            t: UniformGrid::new(0.0, 20.0, 0.05).unwrap(),
            x: UniformGrid::new(-3.0, 3.0, 0.5).unwrap(),
        }
    }

    #[test]
    fn h_conditions_pass_for_dissipative_model() {
        let model = scalar(qp(1.0, 0.3, 1.0), vec![QpFunction::constant(1.0)]);
        let rep = linear_corollary_h_check(&model, 2.4, &small_grid()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.h0_min_margin >= 0.0);
        let sde = SdeModel::Linear(model);
        let scale = 2.4 * (-FRAC_PI_2).exp();
        let re = h0_margin_at(&QuadraticArctan, &|r| scale * r * r, &sde, &rep.h0_witness);
        assert!((re - rep.h0_min_margin).abs() <= 1e-10);
    }

    #[test]
    fn h_conditions_fail_with_witness() {
        let model = scalar(QpFunction::cosine(1.0, 1.0, -FRAC_PI_2).unwrap(), vec![]);
        let rep = linear_corollary_h_check(&model, 1.0, &small_grid()).unwrap();
        assert!(!rep.pass && rep.h0_min_margin < 0.0);
        let s = (rep.h0_witness.t - 1.5 * std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI);
        assert!(s.min(2.0 * std::f64::consts::PI - s) < 0.3, "{}", rep.h0_witness.t);

        let rep = check_h_conditions(&ZeroLyapunov, &|r| r * r, 1.0, 0.0, &SdeModel::Linear(model), &small_grid()).unwrap();
        assert!(!rep.h1_ok && !rep.pass);
    }

    #[test]
    fn linear_corollary_examples() {
        let g = UniformGrid::corollary_time();
        let r = corollary_linear_check(&scalar(qp(1.0, 0.3, 1.0), vec![QpFunction::constant(1.0)]), &g).unwrap();
        assert!(r.pass && (r.c_est - 2.4).abs() < 1e-3);
        let r = corollary_linear_check(&scalar(QpFunction::constant(-1.0), vec![QpFunction::constant(1.0)]), &g).unwrap();
        assert!(!r.pass && (r.c_est + 1.0).abs() < 1e-12);
        let r = corollary_linear_check(&scalar(QpFunction::zero(), vec![]), &g).unwrap();
        assert!(!r.pass && r.c_est == 0.0);
    }

    #[test]
    fn monotone_corollary_examples() {
        let coefs = vec![("k".to_string(), qp(1.0, 0.5, 1.0))];
        let scope = Scope {
            dim: 1,
            coefficients: &coefs,
        };
        let tg = UniformGrid::new(0.0, 20.0, 0.05).unwrap();
        let xg = UniformGrid::state();
        let check = |src: &str| {
            let e = Expression::parse(src, &scope).unwrap();
            corollary_monotone_check(&e, &coefs, 1.0, &tg, &xg).unwrap()
        };
        let r = check("x1 + k*atan(x1)");
        assert!(r.pass && r.min_ratio >= 1.0);
        let r = check("-x1");
        assert!(!r.pass && (r.min_ratio + 1.0).abs() < 1e-12);
        let r = check("2*x1");
        assert!(r.pass && (r.min_ratio - 2.0).abs() < 1e-12);
    }

    fn dirac_path(times: &[f64], x: impl Fn(f64) -> f64) -> MeasurePath {
        let laws = times.iter().map(|&t| Law::Empirical(EmpiricalMeasure::dirac(&[x(t)]))).collect();
        MeasurePath::new(times.to_vec(), laws).unwrap()
    }

    #[test]
    fn separation_matrix_examples() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        // ρ(δ₀, δₓ) = 2x/(2 + x) = e^{−t} for x = 2r/(2 − r)
        let paths = vec![
            dirac_path(&times, |_| 0.0),
            dirac_path(&times, |_| 0.0),
            dirac_path(&times, |_| 3.0),
            dirac_path(&times, |t| {
                let r = (-t).exp();
                2.0 * r / (2.0 - r)
            }),
        ];
        let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let m = amerio_separation_estimate(&labels, &paths, HalfLine::Positive, &LawDistanceOptions::default()).unwrap();
        assert_eq!(m.get(0, 1), 0.0);
        assert!((m.get(0, 2) - 1.2).abs() < 1e-9);
        assert!((m.get(0, 3) - (-10.0f64).exp()).abs() < 1e-9);
        assert!(m.not_separated.contains(&(0, 3)) && !m.not_separated.contains(&(0, 2)));
        for i in 0..4 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..4 {
                assert_eq!(m.get(i, j), m.get(j, i));
            }
        }
        assert_eq!(m.csv_table().rows.len(), 4);

        let late = [dirac_path(&times[1..], |_| 0.0), dirac_path(&times[1..], |_| 1.0)];
        let err = amerio_separation_estimate(&labels[..2], &late, HalfLine::Negative, &LawDistanceOptions::default());
        assert!(matches!(err, Err(SeparationError::GridMismatch(_))));
        let short = dirac_path(&times[..50], |_| 0.0);
        let err = amerio_separation_estimate(&labels[..2], &[paths[0].clone(), short], HalfLine::Positive, &LawDistanceOptions::default());
        assert!(matches!(err, Err(SeparationError::GridMismatch(_))));
    }
}
