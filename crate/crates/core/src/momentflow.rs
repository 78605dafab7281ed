//! First and second moments of linear models.
//!
//! For `dX = (AX + f) dt + Σᵢ (BᵢX + gᵢ) dWᵢ` the mean `m` and the second
//! moment `S = E[XXᵀ]` obey the closed system
//!
//! ```text
//! m' = A m + f
//! S' = A S + S Aᵀ + f mᵀ + m fᵀ + Σᵢ (Bᵢ S Bᵢᵀ + Bᵢ m gᵢᵀ + gᵢ mᵀ Bᵢᵀ + gᵢ gᵢᵀ)
//! ```
//!
//! integrated here with classical RK4. Bounded solutions on the whole line
//! are approximated by burn-in from the distant past.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{GaussianLaw, Law, MeasureError, MeasurePath};
use crate::report::{fmt_num, CsvTable};
use crate::sde::LinearSdeModel;

/// Symmetry tolerance for second moments.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// PSD tolerance for `S − mmᵀ`.
pub const PSD_TOL: f64 = 1e-8;
/// Required sup-difference of `trace S` between a burn-in and its double.
pub const CERTIFICATE_TOL: f64 = 1e-6;
/// `trace S` beyond this marks a diverging flow.
pub const DIVERGENCE_TRACE: f64 = 1e6;

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("initial second moment is not a valid covariance (min eigenvalue {0:e})")]
    NonPsdInput(f64),
    #[error("dt = {dt} exceeds the stability limit {limit}")]
    StepTooLarge { dt: f64, limit: f64 },
    #[error("no bounded flow: trace grows without settling (trace S(b) = {trace:e})")]
    NoBoundedFlow { trace: f64 },
    #[error("burn-in did not converge: doubling difference {difference:e}")]
    NotConverged { difference: f64 },
    #[error("flow carries no convergence certificate")]
    UncertifiedFlow,
    #[error("flows are not on a common grid")]
    GridMismatch,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Mean and second-moment trajectories on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFlow {
    times: Vec<f64>,
    dim: usize,
    means: Vec<f64>,
    second: Vec<f64>,
    certificate: Option<f64>,
}

impl MomentFlow {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    /// Row-major `S(t_k)`.
    pub fn second_moment(&self, k: usize) -> &[f64] {
        let w = self.dim * self.dim;
        &self.second[k * w..(k + 1) * w]
    }

    pub fn trace(&self, k: usize) -> f64 {
        let s = self.second_moment(k);
        (0..self.dim).map(|i| s[i * self.dim + i]).sum()
    }

    pub fn traces(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.trace(k)).collect()
    }

    /// `S − mmᵀ` at `t_k`.
    pub fn covariance(&self, k: usize) -> Vec<f64> {
        let (m, s, d) = (self.mean(k), self.second_moment(k), self.dim);
        let mut c = s.to_vec();
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] -= m[i] * m[j];
            }
        }
        c
    }

    /// Sup-difference of `trace S` between a burn-in and its doubled run,
    /// present only on certified bounded flows.
    pub fn certificate(&self) -> Option<f64> {
        self.certificate
    }

    /// Gaussian law with the flow's moments at `t_k`.
    pub fn gaussian(&self, k: usize) -> Result<GaussianLaw, MeasureError> {
        GaussianLaw::new(self.mean(k).to_vec(), self.covariance(k))
    }

    /// Path of Gaussian laws over the whole grid.
    pub fn law_path(&self) -> Result<MeasurePath, MeasureError> {
        let laws = (0..self.len())
            .map(|k| self.gaussian(k).map(Law::Gaussian))
            .collect::<Result<Vec<_>, _>>()?;
        MeasurePath::new(self.times.clone(), laws)
    }

    /// Worst violations of symmetry and of PSD-ness of `S − mmᵀ`
    /// (`(asymmetry, −min eigenvalue)`).
    pub fn invariant_violation(&self) -> (f64, f64) {
        let d = self.dim;
        let (mut asym, mut neg) = (0.0f64, 0.0f64);
        for k in 0..self.len() {
            let s = self.second_moment(k);
            for i in 0..d {
                for j in 0..i {
                    asym = asym.max((s[i * d + j] - s[j * d + i]).abs());
                }
            }
            neg = neg.max(-min_eigenvalue(&self.covariance(k), d));
        }
        (asym, neg)
    }

    /// Sub-flow on grid times within `[a, b]`.
    pub fn restrict(&self, a: f64, b: f64) -> Self {
        let tol = 1e-9 * (1.0 + a.abs().max(b.abs()));
        let idx: Vec<usize> = (0..self.len())
            .filter(|&k| self.times[k] >= a - tol && self.times[k] <= b + tol)
            .collect();
        let mut out = Self {
            times: Vec::with_capacity(idx.len()),
            dim: self.dim,
            means: Vec::new(),
            second: Vec::new(),
            certificate: self.certificate,
        };
        for k in idx {
            out.times.push(self.times[k]);
            out.means.extend_from_slice(self.mean(k));
            out.second.extend_from_slice(self.second_moment(k));
        }
        out
    }

    /// `time, m1.., S1_1.., trace, sqrt_trace`.
    pub fn csv_table(&self) -> CsvTable {
        let d = self.dim;
        let mut header = vec!["time".to_string()];
        header.extend((1..=d).map(|i| format!("m{i}")));
        for i in 1..=d {
            header.extend((1..=d).map(|j| format!("S{i}_{j}")));
        }
        header.push("trace".into());
        header.push("sqrt_trace".into());
        let mut table = CsvTable::new(header);
        for k in 0..self.len() {
            let tr = self.trace(k);
            let mut row = vec![fmt_num(self.times[k])];
            row.extend(self.mean(k).iter().map(|&v| fmt_num(v)));
            row.extend(self.second_moment(k).iter().map(|&v| fmt_num(v)));
            row.push(fmt_num(tr));
            row.push(fmt_num(tr.max(0.0).sqrt()));
            table.push(row);
        }
        table
    }
}

fn min_eigenvalue(c: &[f64], d: usize) -> f64 {
    if d == 1 {
        return c[0];
    }
    let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (c[i * d + j] + c[j * d + i]));
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest admissible step: `0.1/(1 + sup‖A‖)`.
pub fn step_limit(model: &LinearSdeModel) -> f64 {
    0.1 / (1.0 + model.a_norm_bound())
}

struct Coefs {
    a: DMatrix<f64>,
    f: DVector<f64>,
    b: Vec<DMatrix<f64>>,
    g: Vec<DVector<f64>>,
}

fn coefs(model: &LinearSdeModel, t: f64) -> Coefs {
    let d = model.dim();
    Coefs {
        a: DMatrix::from_row_slice(d, d, &model.a().eval(t)),
        f: DVector::from_vec(model.f().eval(t)),
        b: model.b().iter().map(|b| DMatrix::from_row_slice(d, d, &b.eval(t))).collect(),
        g: model.g().iter().map(|g| DVector::from_vec(g.eval(t))).collect(),
    }
}

fn rhs(c: &Coefs, m: &DVector<f64>, s: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let dm = &c.a * m + &c.f;
    let mut ds = &c.a * s + s * c.a.transpose() + &c.f * m.transpose() + m * c.f.transpose();
    for (b, g) in c.b.iter().zip(&c.g) {
        let bm = b * m;
        ds += b * s * b.transpose() + &bm * g.transpose() + g * bm.transpose() + g * g.transpose();
    }
    (dm, ds)
}

fn check_input(m0: &[f64], s0: &[f64], d: usize) -> Result<(), MomentError> {
    if m0.len() != d || s0.len() != d * d {
        return Err(MomentError::Invalid(format!(
            "moments have sizes {} and {}, model dimension {d}",
            m0.len(),
            s0.len()
        )));
    }
    if m0.iter().chain(s0).any(|v| !v.is_finite()) {
        return Err(MomentError::Invalid("non-finite initial moments".into()));
    }
    let scale = s0.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..d {
        for j in 0..i {
            if (s0[i * d + j] - s0[j * d + i]).abs() > SYMMETRY_TOL * scale {
                return Err(MomentError::Invalid("S0 is not symmetric".into()));
            }
        }
    }
    let mut cov = s0.to_vec();
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] -= m0[i] * m0[j];
        }
    }
    let min = min_eigenvalue(&cov, d);
    if min < -PSD_TOL * scale {
        return Err(MomentError::NonPsdInput(min));
    }
    Ok(())
}

/// RK4 integration of the moment system from `(m0, S0)` at `t0` to `t1`.
///
/// The grid has `⌈(t1 − t0)/dt⌉` equal steps, each no longer than `dt`.
pub fn propagate_moments(
    model: &LinearSdeModel,
    m0: &[f64],
    s0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<MomentFlow, MomentError> {
    check_input(m0, s0, model.dim())?;
    integrate(model, m0, s0, t0, t1, dt)
}

/// [`propagate_moments`] without the input check, for continuing a flow
/// whose state carries RK4 drift in a degenerate covariance.
fn integrate(
    model: &LinearSdeModel,
    m0: &[f64],
    s0: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<MomentFlow, MomentError> {
    let d = model.dim();
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(MomentError::Invalid("need finite t0 < t1".into()));
    }
    let limit = step_limit(model);
    if !(dt > 0.0) || dt > limit {
        return Err(MomentError::StepTooLarge { dt, limit });
    }
    let n = ((t1 - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;

    let mut m = DVector::from_column_slice(m0);
    let mut s = DMatrix::from_row_slice(d, d, s0);
    let mut flow = MomentFlow {
        times: Vec::with_capacity(n + 1),
        dim: d,
        means: Vec::with_capacity((n + 1) * d),
        second: Vec::with_capacity((n + 1) * d * d),
        certificate: None,
    };
    let push = |flow: &mut MomentFlow, t: f64, m: &DVector<f64>, s: &DMatrix<f64>| {
        flow.times.push(t);
        flow.means.extend(m.iter());
        for i in 0..d {
            for j in 0..d {
                flow.second.push(0.5 * (s[(i, j)] + s[(j, i)]));
            }
        }
    };
    push(&mut flow, t0, &m, &s);
    let mut c_start = coefs(model, t0);
    for k in 0..n {
        let t = t0 + k as f64 * h;
        let c_mid = coefs(model, t + 0.5 * h);
        let t_next = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * h };
        let c_end = coefs(model, t_next);
        let (k1m, k1s) = rhs(&c_start, &m, &s);
        let (k2m, k2s) = rhs(&c_mid, &(&m + &k1m * (0.5 * h)), &(&s + &k1s * (0.5 * h)));
        let (k3m, k3s) = rhs(&c_mid, &(&m + &k2m * (0.5 * h)), &(&s + &k2s * (0.5 * h)));
        let (k4m, k4s) = rhs(&c_end, &(&m + &k3m * h), &(&s + &k3s * h));
        m += (k1m + k2m * 2.0 + k3m * 2.0 + k4m) * (h / 6.0);
        s += (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (h / 6.0);
        s = (&s + s.transpose()) * 0.5;
        push(&mut flow, t_next, &m, &s);
        c_start = c_end;
    }
    Ok(flow)
}

/// Unique quasi-periodic mean solution of `m' = A m + f` for constant `A`,
/// evaluated at `t`. `None` if `A` varies in time or some forcing frequency
/// is resonant with `A`.
pub fn steady_mean(model: &LinearSdeModel, t: f64) -> Option<Vec<f64>> {
    if !model.a().is_time_constant() {
        return None;
    }
    let d = model.dim();
    let a = DMatrix::from_row_slice(d, d, &model.a().eval(0.0));
    let ac = a.map(|v| Complex::new(v, 0.0));
    let solve = |omega: f64| -> Option<DMatrix<Complex<f64>>> {
        let mut mat = -ac.clone();
        for i in 0..d {
            mat[(i, i)] += Complex::new(0.0, omega);
        }
        let inv = mat.try_inverse()?;
        let norm = inv.iter().map(|z| z.norm()).fold(0.0, f64::max);
        (norm.is_finite() && norm < 1e8).then_some(inv)
    };
    let mut out = vec![0.0; d];
    for j in 0..d {
        let fj = model.f().get(j, 0);
        if fj.offset() != 0.0 {
            let inv = solve(0.0)?;
            for i in 0..d {
                out[i] += inv[(i, j)].re * fj.offset();
            }
        }
        for mode in fj.modes() {
            let inv = solve(mode.freq)?;
            let phasor = Complex::from_polar(mode.amp, mode.freq * t + mode.phase);
            for i in 0..d {
                out[i] += (inv[(i, j)] * phasor).re;
            }
        }
    }
    Some(out)
}

/// Settings for [`bounded_flow_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnInOptions {
    pub certificate_tol: f64,
    pub divergence_trace: f64,
    /// Start the burn-in from the steady mean when one exists.
    pub steady_start: bool,
}

impl Default for BurnInOptions {
    fn default() -> Self {
        Self {
            certificate_tol: CERTIFICATE_TOL,
            divergence_trace: DIVERGENCE_TRACE,
            steady_start: true,
        }
    }
}

/// Bounded flow on `[a, b]` by burn-in from `a − burn_in`, certified
/// against a run with doubled burn-in.
pub fn bounded_flow(
    model: &LinearSdeModel,
    burn_in: f64,
    window: (f64, f64),
    dt: f64,
) -> Result<MomentFlow, MomentError> {
    bounded_flow_with(model, burn_in, window, dt, &BurnInOptions::default())
}

pub fn bounded_flow_with(
    model: &LinearSdeModel,
    burn_in: f64,
    window: (f64, f64),
    dt: f64,
    opts: &BurnInOptions,
) -> Result<MomentFlow, MomentError> {
    if !(burn_in > 0.0 && burn_in.is_finite()) {
        return Err(MomentError::Invalid("burn_in must be positive".into()));
    }
    let (a, b) = window;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(MomentError::Invalid("window must satisfy a < b".into()));
    }
    let run = |burn: f64| -> Result<MomentFlow, MomentError> {
        let d = model.dim();
        let start = a - burn;
        let m0 = if opts.steady_start {
            steady_mean(model, start).unwrap_or_else(|| vec![0.0; d])
        } else {
            vec![0.0; d]
        };
        let mut s0 = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                s0[i * d + j] = m0[i] * m0[j];
            }
        }
        let pre = propagate_moments(model, &m0, &s0, start, a, dt)?;
        let last = pre.len() - 1;
        let flow = integrate(model, pre.mean(last), pre.second_moment(last), a, b, dt)?;
        let tr = flow.trace(flow.len() - 1);
        if !(tr <= opts.divergence_trace) {
            return Err(MomentError::NoBoundedFlow { trace: tr });
        }
        Ok(flow)
    };
    let sup_diff = |x: &MomentFlow, y: &MomentFlow| {
        (0..x.len())
            .map(|k| (x.trace(k) - y.trace(k)).abs())
            .fold(0.0, f64::max)
    };
    let mut flow = run(burn_in)?;
    let doubled = run(2.0 * burn_in)?;
    let d1 = sup_diff(&flow, &doubled);
    if d1 < opts.certificate_tol {
        flow.certificate = Some(d1);
        return Ok(flow);
    }
    // Distinguish slow convergence from growth: a contracting flow shrinks
    // the doubling difference, a diverging one does not.
    let quadrupled = run(4.0 * burn_in)?;
    let d2 = sup_diff(&doubled, &quadrupled);
    if d2 >= d1 {
        return Err(MomentError::NoBoundedFlow {
            trace: quadrupled.trace(quadrupled.len() - 1),
        });
    }
    Err(MomentError::NotConverged { difference: d1 })
}

/// Grid estimate of `sup_t √trace S(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimalValue {
    pub value: f64,
    pub argmax_time: f64,
    /// Half the largest change of `√trace S` between grid neighbours; the
    /// true supremum is expected within `value + grid_slack`.
    pub grid_slack: f64,
}

pub fn minimal_value(flow: &MomentFlow) -> Result<MinimalValue, MomentError> {
    if flow.certificate.is_none() {
        return Err(MomentError::UncertifiedFlow);
    }
    let roots: Vec<f64> = flow.traces().iter().map(|t| t.max(0.0).sqrt()).collect();
    let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
    for (k, &r) in roots.iter().enumerate() {
        if r > best {
            best = r;
            arg = k;
        }
    }
    let slack = roots.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max) * 0.5;
    Ok(MinimalValue {
        value: best,
        argmax_time: flow.times[arg],
        grid_slack: slack,
    })
}

/// `max_t |tr S_mid + tr S_halfdiff − ½(tr S₁ + tr S₂)|`.
pub fn parallelogram_residual(
    flow1: &MomentFlow,
    flow2: &MomentFlow,
    mid: &MomentFlow,
    halfdiff: &MomentFlow,
) -> Result<f64, MomentError> {
    let n = flow1.len();
    let same = |f: &MomentFlow| {
        f.len() == n
            && f.dim == flow1.dim
            && f.times.iter().zip(&flow1.times).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + a.abs()))
    };
    if !(same(flow2) && same(mid) && same(halfdiff)) {
        return Err(MomentError::GridMismatch);
    }
    Ok((0..n)
        .map(|k| (mid.trace(k) + halfdiff.trace(k) - 0.5 * (flow1.trace(k) + flow2.trace(k))).abs())
        .fold(0.0, f64::max))
}

/// Moments of `X + c·z` where `z` is deterministic and `X` has moments
/// `(m, S)`: `(m + cz, S + c(mzᵀ + zmᵀ) + c²zzᵀ)`.
pub fn shifted_moments(m: &[f64], s: &[f64], z: &[f64], c: f64) -> (Vec<f64>, Vec<f64>) {
    let d = m.len();
    let m2: Vec<f64> = m.iter().zip(z).map(|(a, b)| a + c * b).collect();
    let mut s2 = s.to_vec();
    for i in 0..d {
        for j in 0..d {
            s2[i * d + j] += c * (m[i] * z[j] + z[i] * m[j]) + c * c * z[i] * z[j];
        }
    }
    (m2, s2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apfun::{QpFunction, QpMatrix};

    fn ou(f: QpFunction) -> LinearSdeModel {
        LinearSdeModel::scalar(QpFunction::constant(-1.0), f, vec![QpFunction::zero()], vec![QpFunction::constant(1.0)])
            .unwrap()
    }

    fn cos_sum() -> QpFunction {
        QpFunction::cosine(1.0, 1.0, 0.0)
            .unwrap()
            .add(&QpFunction::cosine(1.0, 2f64.sqrt(), 0.0).unwrap())
    }

    #[test]
    fn stationary_ou_stays_stationary() {
        let flow = propagate_moments(&ou(QpFunction::zero()), &[0.0], &[0.5], 0.0, 10.0, 0.01).unwrap();
        for k in 0..flow.len() {
            assert!((flow.second_moment(k)[0] - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn matches_matrix_exponential() {
        let a = [-0.5, 1.0, -0.3, -0.8];
        let model = LinearSdeModel::new(
            QpMatrix::from_constants(2, 2, &a).unwrap(),
            QpMatrix::zeros(2, 1),
            vec![],
            vec![],
        )
        .unwrap();
        let m0 = [1.0, -2.0];
        let s0 = [1.0, -2.0, -2.0, 4.0];
        let flow = propagate_moments(&model, &m0, &s0, 3.0, 4.0, 0.01).unwrap();
        let e = DMatrix::from_row_slice(2, 2, &a).exp();
        let want = e * DVector::from_column_slice(&m0);
        let last = flow.len() - 1;
        for i in 0..2 {
            assert!((flow.mean(last)[i] - want[i]).abs() < 1e-6);
        }
        // rank one preserved
        let (m, s) = (flow.mean(last), flow.second_moment(last));
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[i * 2 + j] - m[i] * m[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_input_and_large_steps() {
        let m = ou(QpFunction::zero());
        assert!(matches!(
            propagate_moments(&m, &[1.0], &[0.5], 0.0, 1.0, 0.01),
            Err(MomentError::NonPsdInput(_))
        ));
        assert!(matches!(
            propagate_moments(&m, &[0.0], &[0.5], 0.0, 1.0, 0.06),
            Err(MomentError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn burn_in_certifies_forced_ou() {
        let model = ou(cos_sum());
        let f20 = bounded_flow(&model, 20.0, (0.0, 10.0), 0.01).unwrap();
        let f40 = bounded_flow(&model, 40.0, (0.0, 10.0), 0.01).unwrap();
        assert!(f20.certificate().unwrap() < 1e-6);
        for k in 0..f20.len() {
            assert!((f20.trace(k) - f40.trace(k)).abs() < 1e-6);
        }
    }

    #[test]
    fn rotation_with_noise_has_no_bounded_flow() {
        let model = LinearSdeModel::new(
            QpMatrix::from_constants(2, 2, &[0.0, -1.0, 1.0, 0.0]).unwrap(),
            QpMatrix::zeros(2, 1),
            vec![QpMatrix::zeros(2, 2)],
            vec![QpMatrix::from_constants(2, 1, &[1.0, 0.0]).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            bounded_flow(&model, 20.0, (0.0, 5.0), 0.01),
            Err(MomentError::NoBoundedFlow { .. })
        ));
    }

    #[test]
    fn zero_model_gives_zero_flow() {
        let model = LinearSdeModel::scalar(QpFunction::zero(), QpFunction::zero(), vec![], vec![]).unwrap();
        let flow = bounded_flow(&model, 5.0, (0.0, 1.0), 0.01).unwrap();
        assert!(flow.traces().iter().all(|&t| t == 0.0));
        assert_eq!(minimal_value(&flow).unwrap().value, 0.0);
    }

    #[test]
    fn minimal_values() {
        let flow = bounded_flow(&ou(QpFunction::zero()), 30.0, (0.0, 10.0), 0.01).unwrap();
        assert!((minimal_value(&flow).unwrap().value - 0.5f64.sqrt()).abs() < 1e-6);
        let forced = ou(QpFunction::cosine(1.0, 1.0, 0.0).unwrap());
        let flow = bounded_flow(&forced, 30.0, (0.0, 20.0), 0.01).unwrap();
        let mv = minimal_value(&flow).unwrap();
        assert!((mv.value - 1.0).abs() < 1e-3, "{mv:?}");
        let raw = propagate_moments(&forced, &[0.0], &[0.0], 0.0, 1.0, 0.01).unwrap();
        assert!(matches!(minimal_value(&raw), Err(MomentError::UncertifiedFlow)));
    }

    #[test]
    fn steady_mean_solves_the_mean_equation() {
        let model = ou(QpFunction::cosine(1.0, 1.0, 0.0).unwrap());
        for t in [0.0, 1.3, -4.0] {
            let m = steady_mean(&model, t).unwrap()[0];
            assert!((m - 0.5 * (t.cos() + t.sin())).abs() < 1e-12);
        }
        let rot = LinearSdeModel::new(
            QpMatrix::from_constants(2, 2, &[0.0, -1.0, 1.0, 0.0]).unwrap(),
            QpMatrix::vector(vec![QpFunction::cosine(1.0, 1.0, 0.0).unwrap(), QpFunction::zero()]),
            vec![],
            vec![],
        )
        .unwrap();
        assert!(steady_mean(&rot, 0.0).is_none());
    }

    #[test]
    fn parallelogram_exact_algebra() {
        let model = ou(cos_sum());
        let flow1 = bounded_flow(&model, 20.0, (0.0, 10.0), 0.01).unwrap();
        let residual_same = parallelogram_residual(
            &flow1,
            &flow1,
            &flow1,
            &propagate_moments(&model.homogeneous(), &[0.0], &[0.0], 0.0, 10.0, 0.01).unwrap(),
        )
        .unwrap();
        assert!(residual_same < 1e-9);

        let z0 = [0.7];
        let (m1, s1) = (flow1.mean(0).to_vec(), flow1.second_moment(0).to_vec());
        let run = |c: f64| {
            let (m, s) = shifted_moments(&m1, &s1, &z0, c);
            propagate_moments(&model, &m, &s, 0.0, 10.0, 0.01).unwrap()
        };
        let (flow2, mid) = (run(1.0), run(0.5));
        let hd = propagate_moments(&model.homogeneous(), &[0.35], &[0.35 * 0.35], 0.0, 10.0, 0.01).unwrap();
        assert!(parallelogram_residual(&flow1, &flow2, &mid, &hd).unwrap() < 1e-8);
        let short = flow1.restrict(0.0, 5.0);
        assert!(matches!(
            parallelogram_residual(&flow1, &short, &mid, &hd),
            Err(MomentError::GridMismatch)
        ));
    }

    #[test]
    fn csv_layout() {
        let flow = propagate_moments(&ou(QpFunction::zero()), &[0.0], &[0.5], 0.0, 0.05, 0.01).unwrap();
        let text = String::from_utf8(flow.csv_table().to_bytes()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time,m1,S1_1,trace,sqrt_trace");
        assert_eq!(lines.len(), 7);
    }
}
