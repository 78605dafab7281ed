//! Quasi-periodic trigonometric sums.
//!
//! A [`QpFunction`] is `offset + Σ amp·cos(freq·t + phase)` with finitely many
//! strictly positive frequencies. Finite sums of this kind are dense in the
//! Bohr almost-periodic functions and keep every quantity the rest of the
//! crate needs (mean, shifts, primitives, products) in closed form.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance under which two frequencies are treated as equal when
/// modes are merged.
const FREQ_MERGE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApfunError {
    #[error("mode frequency must be strictly positive and finite, got {0}")]
    InvalidFrequency(f64),
    #[error("non-finite coefficient in quasi-periodic function")]
    NonFinite,
    #[error("scan grid has fewer than two points")]
    DegenerateScan,
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("shape mismatch: expected {expected} entries, got {got}")]
    Shape { expected: usize, got: usize },
}

/// One term `amp·cos(freq·t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct RawQp {
    #[serde(default)]
    offset: f64,
    #[serde(default)]
    modes: Vec<Mode>,
}

/// Finite trigonometric sum with a constant offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQp")]
pub struct QpFunction {
    offset: f64,
    modes: Vec<Mode>,
}

impl TryFrom<RawQp> for QpFunction {
    type Error = ApfunError;

    fn try_from(raw: RawQp) -> Result<Self, Self::Error> {
        QpFunction::new(raw.offset, raw.modes)
    }
}

/// Wraps a phase into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl QpFunction {
    pub fn new(offset: f64, modes: Vec<Mode>) -> Result<Self, ApfunError> {
        if !offset.is_finite() {
            return Err(ApfunError::NonFinite);
        }
        let mut canon = Vec::with_capacity(modes.len());
        for m in modes {
            if !(m.freq.is_finite() && m.freq > 0.0) {
                return Err(ApfunError::InvalidFrequency(m.freq));
            }
            if !m.amp.is_finite() || !m.phase.is_finite() {
                return Err(ApfunError::NonFinite);
            }
            canon.push(Mode {
                amp: m.amp,
                freq: m.freq,
                phase: wrap_phase(m.phase),
            });
        }
        Ok(Self {
            offset,
            modes: canon,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self {
            offset: c,
            modes: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// Single cosine `amp·cos(freq·t + phase)`.
    pub fn cosine(amp: f64, freq: f64, phase: f64) -> Result<Self, ApfunError> {
        Self::new(0.0, vec![Mode { amp, freq, phase }])
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|m| m.amp == 0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .modes
                .iter()
                .map(|m| m.amp * (m.freq * t + m.phase).cos())
                .sum::<f64>()
    }

    /// Exact time mean (the zero-frequency coefficient).
    pub fn mean(&self) -> f64 {
        self.offset
    }

    /// `t ↦ self(t + tau)`, realized as a phase update.
    pub fn shift(&self, tau: f64) -> Self {
        Self {
            offset: self.offset,
            modes: self
                .modes
                .iter()
                .map(|m| Mode {
                    amp: m.amp,
                    freq: m.freq,
                    phase: wrap_phase(m.phase + m.freq * tau),
                })
                .collect(),
        }
    }

    /// `|offset| + Σ|amp|`, an upper bound for `sup_t |f(t)|`.
    pub fn sup_bound(&self) -> f64 {
        self.offset.abs() + self.modes.iter().map(|m| m.amp.abs()).sum::<f64>()
    }

    /// `Σ|amp·freq|`, an upper bound for `sup_t |f'(t)|`.
    pub fn derivative_bound(&self) -> f64 {
        self.modes.iter().map(|m| (m.amp * m.freq).abs()).sum()
    }

    pub fn max_frequency(&self) -> f64 {
        self.modes.iter().map(|m| m.freq).fold(0.0, f64::max)
    }

    /// `∫₀ᵗ f(s) ds`.
    pub fn primitive(&self, t: f64) -> f64 {
        self.offset * t
            + self
                .modes
                .iter()
                .map(|m| m.amp / m.freq * ((m.freq * t + m.phase).sin() - m.phase.sin()))
                .sum::<f64>()
    }

    /// Time-derivative.
    pub fn derivative(&self) -> Self {
        let modes = self
            .modes
            .iter()
            .map(|m| Mode {
                amp: m.amp * m.freq,
                freq: m.freq,
                phase: wrap_phase(m.phase + PI / 2.0),
            })
            .collect();
        Self {
            offset: 0.0,
            modes,
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            offset: self.offset * c,
            modes: self
                .modes
                .iter()
                .map(|m| Mode { amp: m.amp * c, ..*m })
                .collect(),
        }
        .normalized()
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        Self {
            offset: self.offset + other.offset,
            modes,
        }
        .normalized()
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Product via `cos a · cos b = ½cos(a−b) + ½cos(a+b)`.
    pub fn mul(&self, other: &Self) -> Self {
        let mut offset = self.offset * other.offset;
        let mut modes = Vec::new();
        for m in &self.modes {
            modes.push(Mode {
                amp: m.amp * other.offset,
                ..*m
            });
        }
        for m in &other.modes {
            modes.push(Mode {
                amp: m.amp * self.offset,
                ..*m
            });
        }
        for a in &self.modes {
            for b in &other.modes {
                let half = 0.5 * a.amp * b.amp;
                modes.push(Mode {
                    amp: half,
                    freq: a.freq + b.freq,
                    phase: a.phase + b.phase,
                });
                let df = a.freq - b.freq;
                let dp = a.phase - b.phase;
                if df.abs() <= FREQ_MERGE_RTOL * a.freq.max(b.freq) {
                    offset += half * dp.cos();
                } else if df > 0.0 {
                    modes.push(Mode {
                        amp: half,
                        freq: df,
                        phase: dp,
                    });
                } else {
                    modes.push(Mode {
                        amp: half,
                        freq: -df,
                        phase: -dp,
                    });
                }
            }
        }
        Self { offset, modes }.normalized()
    }

    /// Merges modes sharing a frequency, drops vanishing ones, sorts by
    /// frequency and puts every amplitude in `amp ≥ 0` form.
    pub fn normalized(&self) -> Self {
        let mut sorted = self.modes.clone();
        sorted.sort_by(|a, b| a.freq.total_cmp(&b.freq));
        let mut merged: Vec<(f64, f64, f64)> = Vec::new(); // (freq, re, im)
        for m in sorted {
            let (re, im) = (m.amp * m.phase.cos(), m.amp * m.phase.sin());
            match merged.last_mut() {
                Some(last) if (m.freq - last.0).abs() <= FREQ_MERGE_RTOL * m.freq => {
                    last.1 += re;
                    last.2 += im;
                }
                _ => merged.push((m.freq, re, im)),
            }
        }
        let scale = self.sup_bound().max(f64::MIN_POSITIVE);
        let modes = merged
            .into_iter()
            .filter_map(|(freq, re, im)| {
                let amp = re.hypot(im);
                (amp > 1e-15 * scale).then(|| Mode {
                    amp,
                    freq,
                    phase: wrap_phase(im.atan2(re)),
                })
            })
            .collect();
        Self {
            offset: self.offset,
            modes,
        }
    }
}

impl Default for QpFunction {
    fn default() -> Self {
        Self::zero()
    }
}

impl fmt::Display for QpFunction {
    /// Textual form `offset + amp*cos(freq*t + phase) + ...`, parseable by the
    /// configuration expression language.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.offset)?;
        for m in &self.modes {
            write!(f, " + {:?}*cos({:?}*t + {:?})", m.amp, m.freq, m.phase)?;
        }
        Ok(())
    }
}

/// Dense grid of [`QpFunction`] entries (row-major). Vectors are `cols == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<QpFunction>,
}

impl QpMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<QpFunction>) -> Result<Self, ApfunError> {
        if entries.len() != rows * cols {
            return Err(ApfunError::Shape {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![QpFunction::zero(); rows * cols],
        }
    }

    pub fn vector(entries: Vec<QpFunction>) -> Self {
        Self {
            rows: entries.len(),
            cols: 1,
            entries,
        }
    }

    pub fn from_constants(rows: usize, cols: usize, values: &[f64]) -> Result<Self, ApfunError> {
        Self::new(
            rows,
            cols,
            values.iter().map(|&v| QpFunction::constant(v)).collect(),
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &QpFunction {
        &self.entries[i * self.cols + j]
    }

    pub fn entries(&self) -> &[QpFunction] {
        &self.entries
    }

    /// Writes the row-major values at time `t` into `out`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.entries) {
            *o = e.eval(t);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.entries.len()];
        self.eval_into(t, &mut v);
        v
    }

    pub fn shift(&self, tau: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|e| e.shift(tau)).collect(),
        }
    }

    /// Frobenius norm of the entrywise sup bounds.
    pub fn sup_norm_bound(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.sup_bound().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.offset() == 0.0 && e.is_constant())
    }

    pub fn is_time_constant(&self) -> bool {
        self.entries.iter().all(QpFunction::is_constant)
    }

    pub fn max_frequency(&self) -> f64 {
        self.entries
            .iter()
            .map(QpFunction::max_frequency)
            .fold(0.0, f64::max)
    }
}

/// Settings of the `sup_t |f(t+τ) − f(t)|` estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupEstimator {
    pub span: f64,
    pub step: f64,
}

impl Default for SupEstimator {
    fn default() -> Self {
        Self {
            span: 500.0,
            step: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlmostPeriodReport {
    pub epsilon: f64,
    pub scan_interval: (f64, f64),
    pub detected_periods: Vec<f64>,
    pub max_gap: f64,
    pub relatively_dense_within_scan: bool,
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, iters: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// `Σ 2|amp·sin(freq·τ/2)|`: exact bound on `sup_t |f(t+τ) − f(t)|`.
pub fn shift_deviation_bound(f: &QpFunction, tau: f64) -> f64 {
    f.modes()
        .iter()
        .map(|m| 2.0 * (m.amp * (0.5 * m.freq * tau).sin()).abs())
        .sum()
}

/// Root-mean-square of `t ↦ f(t+τ) − f(t)`, a lower bound for its sup.
fn shift_deviation_rms(f: &QpFunction, tau: f64) -> f64 {
    let g = f.shift(tau).sub(f);
    (g.modes().iter().map(|m| 0.5 * m.amp * m.amp).sum::<f64>()).sqrt()
}

/// Grid estimate of `D(τ) = sup_t |f(t+τ) − f(t)|` refined by golden-section
/// search around the grid maximizer.
///
/// The difference is sampled symmetrically as `f(s+τ/2) − f(s−τ/2)`, so
/// `D(−τ) == D(τ)` holds bit-for-bit.
pub fn shift_deviation(f: &QpFunction, tau: f64, est: &SupEstimator) -> f64 {
    if f.modes().is_empty() {
        return 0.0;
    }
    let half = 0.5 * tau;
    let h = |s: f64| (f.eval(s + half) - f.eval(s - half)).abs();
    let n = (est.span / est.step).round() as usize;
    let (mut best_s, mut best) = (0.0, f64::NEG_INFINITY);
    for k in 0..=n {
        let s = k as f64 * est.step;
        let v = h(s);
        if v > best {
            best = v;
            best_s = s;
        }
    }
    let (_, refined) = golden_max(h, best_s - est.step, best_s + est.step, 40);
    best.max(refined)
}

fn scan_grid(scan: (f64, f64), step: f64) -> Result<Vec<f64>, ApfunError> {
    let (lo, hi) = scan;
    if !(step > 0.0) || !step.is_finite() {
        return Err(ApfunError::InvalidArgument("scan step must be positive"));
    }
    if !(lo < hi) {
        return Err(ApfunError::InvalidArgument("scan interval must satisfy tau_min < tau_max"));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    if count < 2 {
        return Err(ApfunError::DegenerateScan);
    }
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

/// Largest period-free window, scan boundaries included.
pub(crate) fn max_gap(periods: &[f64], scan: (f64, f64)) -> f64 {
    match (periods.first(), periods.last()) {
        (Some(&first), Some(&last)) => {
            let inner = periods
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(0.0, f64::max);
            inner.max(first - scan.0).max(scan.1 - last).max(0.0)
        }
        _ => scan.1 - scan.0,
    }
}

pub(crate) fn density_verdict(periods: &[f64], scan: (f64, f64), gap: f64) -> bool {
    periods.len() >= 2 && gap < 0.5 * (scan.1 - scan.0)
}

/// ε-almost periods of `f` on a finite scan with the default estimator.
pub fn almost_periods(
    f: &QpFunction,
    epsilon: f64,
    scan: (f64, f64),
    step: f64,
) -> Result<AlmostPeriodReport, ApfunError> {
    almost_periods_with(f, epsilon, scan, step, &SupEstimator::default())
}

pub fn almost_periods_with(
    f: &QpFunction,
    epsilon: f64,
    scan: (f64, f64),
    step: f64,
    est: &SupEstimator,
) -> Result<AlmostPeriodReport, ApfunError> {
    if !(epsilon > 0.0) {
        return Err(ApfunError::InvalidArgument("epsilon must be positive"));
    }
    let grid = scan_grid(scan, step)?;
    Ok(almost_periods_on_grid(f, epsilon, scan, &grid, est))
}

pub(crate) fn almost_periods_on_grid(
    f: &QpFunction,
    epsilon: f64,
    scan: (f64, f64),
    grid: &[f64],
    est: &SupEstimator,
) -> AlmostPeriodReport {
    let step = if grid.len() > 1 { grid[1] - grid[0] } else { 0.0 };
    // Cheap certificates first: the closed-form bound settles clear hits, the
    // RMS lower bound clear misses; only the rest hits the grid estimator.
    let hit: Vec<bool> = grid
        .iter()
        .map(|&tau| {
            if shift_deviation_bound(f, tau) < epsilon {
                true
            } else if shift_deviation_rms(f, tau) >= epsilon {
                false
            } else {
                shift_deviation(f, tau, est) < epsilon
            }
        })
        .collect();

    let mut periods: Vec<f64> = grid
        .iter()
        .zip(&hit)
        .filter_map(|(&tau, &h)| h.then_some(tau))
        .collect();

    // Refine strict local minima of D among grid hits.
    if !f.modes().is_empty() {
        let n = grid.len();
        let mut dval = vec![f64::NAN; n];
        let d_at = |k: usize, dval: &mut Vec<f64>| {
            if dval[k].is_nan() {
                dval[k] = shift_deviation(f, grid[k], est);
            }
            dval[k]
        };
        let mut refined = Vec::new();
        for k in 0..n {
            if !hit[k] {
                continue;
            }
            let dk = d_at(k, &mut dval);
            let left_ok = k == 0 || d_at(k - 1, &mut dval) > dk;
            let right_ok = k + 1 == n || d_at(k + 1, &mut dval) >= dk;
            if !(left_ok && right_ok) {
                continue;
            }
            let lo = (grid[k] - step).max(scan.0);
            let hi = (grid[k] + step).min(scan.1);
            let (tau_star, neg_d) =
                golden_max(|tau| -shift_deviation(f, tau, est), lo, hi, 40);
            if -neg_d < dk - 1e-15 && (tau_star - grid[k]).abs() > 1e-12 {
                refined.push(tau_star);
            }
        }
        periods.extend(refined);
        periods.sort_by(f64::total_cmp);
        periods.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    }

    let gap = max_gap(&periods, scan);
    AlmostPeriodReport {
        epsilon,
        scan_interval: scan,
        relatively_dense_within_scan: density_verdict(&periods, scan, gap),
        detected_periods: periods,
        max_gap: gap,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::SQRT_2;

    fn two_tone() -> QpFunction {
        QpFunction::new(
            0.0,
            vec![
                Mode { amp: 1.0, freq: 1.0, phase: 0.0 },
                Mode { amp: 1.0, freq: SQRT_2, phase: 0.0 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn eval_examples() {
        assert_eq!(two_tone().eval(0.0), 2.0);
        assert_eq!(QpFunction::constant(3.5).eval(17.3), 3.5);
        let f = QpFunction::cosine(2.0, 1.0, PI / 2.0).unwrap();
        assert!(f.eval(0.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_frequencies() {
        assert!(matches!(
            QpFunction::cosine(1.0, 0.0, 0.0),
            Err(ApfunError::InvalidFrequency(_))
        ));
        assert!(QpFunction::cosine(1.0, -1.0, 0.0).is_err());
        assert!(QpFunction::cosine(1.0, f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn mean_examples() {
        assert_eq!(QpFunction::cosine(1.0, 1.0, 0.0).unwrap().mean(), 0.0);
        let f = QpFunction::new(3.0, vec![Mode { amp: 1.0, freq: 1.0, phase: 0.0 }]).unwrap();
        assert_eq!(f.mean(), 3.0);
        // Composite Simpson on [0, 1000]; the exact average is 3 + sin(1000)/1000.
        let n = 200_000;
        let h = 1000.0 / n as f64;
        let mut s = f.eval(0.0) + f.eval(1000.0);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f.eval(k as f64 * h);
        }
        let avg = s * h / 3.0 / 1000.0;
        assert!((avg - 3.0).abs() < 2e-3);
    }

    #[test]
    fn shift_examples() {
        let f = two_tone();
        let g = f.shift(0.0);
        for k in 0..100 {
            let t = k as f64 * 0.37 - 10.0;
            assert_eq!(f.eval(t), g.eval(t));
        }
        let a = f.shift(1.3).shift(-4.1);
        let b = f.shift(1.3 - 4.1);
        for k in 0..100 {
            let t = k as f64 * 0.37 - 10.0;
            assert!((a.eval(t) - b.eval(t)).abs() < 1e-12);
        }
        assert_eq!(f.shift(12.0).mean(), f.mean());
    }

    #[test]
    fn product_matches_pointwise() {
        let f = QpFunction::new(0.5, vec![Mode { amp: 1.2, freq: 1.0, phase: 0.3 }]).unwrap();
        let g = QpFunction::new(-1.0, vec![
            Mode { amp: 0.7, freq: 1.0, phase: 2.0 },
            Mode { amp: 0.2, freq: SQRT_2, phase: 0.0 },
        ])
        .unwrap();
        let p = f.mul(&g);
        for k in 0..50 {
            let t = k as f64 * 0.91;
            assert!((p.eval(t) - f.eval(t) * g.eval(t)).abs() < 1e-12);
        }
        // cos² t = ½ + ½cos 2t
        let c = QpFunction::cosine(1.0, 1.0, 0.0).unwrap();
        assert!((c.mul(&c).mean() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn primitive_matches_quadrature() {
        let f = two_tone().add(&QpFunction::constant(0.25));
        let t = 7.5;
        let n = 20_000;
        let h = t / n as f64;
        let mut s = f.eval(0.0) + f.eval(t);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f.eval(k as f64 * h);
        }
        assert!((s * h / 3.0 - f.primitive(t)).abs() < 1e-10);
    }

    #[test]
    fn cosine_period_detected() {
        let f = QpFunction::cosine(1.0, 1.0, 0.0).unwrap();
        let step = 0.01;
        let r = almost_periods(&f, 0.1, (1.0, 20.0), step).unwrap();
        let nearest = r
            .detected_periods
            .iter()
            .map(|p| (p - TAU).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(nearest < step, "nearest period misses 2π by {nearest}");
        assert!(r.detected_periods.iter().all(|&p| (1.0..=20.0).contains(&p)));
        assert!(shift_deviation(&f, TAU, &SupEstimator::default()) < 1e-12);
    }

    #[test]
    fn constant_has_every_period() {
        let f = QpFunction::constant(2.0);
        let r = almost_periods(&f, 1e-3, (0.0, 1.0), 0.1).unwrap();
        assert_eq!(r.detected_periods.len(), 11);
        assert!((r.max_gap - 0.1).abs() < 1e-12);
        assert!(r.relatively_dense_within_scan);
    }

    #[test]
    fn two_tone_is_relatively_dense_within_scan() {
        let r = almost_periods(&two_tone(), 0.2, (1.0, 200.0), 0.01).unwrap();
        assert!(!r.detected_periods.is_empty());
        assert!(r.relatively_dense_within_scan, "max gap {}", r.max_gap);
        // Near-returns of (t, √2 t) mod 2π sit close to 2π·12, 2π·17 and 2π·29.
        for target in [75.4, 106.6, 182.2] {
            assert!(r.detected_periods.iter().any(|p| (p - target).abs() < 0.3));
        }
    }

    #[test]
    fn degenerate_scan_is_reported() {
        let f = QpFunction::constant(1.0);
        assert_eq!(
            almost_periods(&f, 0.1, (0.0, 0.05), 0.1),
            Err(ApfunError::DegenerateScan)
        );
        assert!(matches!(
            almost_periods(&f, 0.1, (1.0, 0.0), 0.1),
            Err(ApfunError::InvalidArgument(_))
        ));
    }

    #[test]
    fn empty_detection_is_not_dense() {
        let f = QpFunction::cosine(1.0, 1.0, 0.0).unwrap();
        let r = almost_periods(&f, 0.05, (1.0, 5.0), 0.01).unwrap();
        assert!(r.detected_periods.is_empty());
        assert!(!r.relatively_dense_within_scan);
        assert_eq!(r.max_gap, 4.0);
    }

    #[test]
    fn display_is_textual_sum() {
        let f = QpFunction::new(1.0, vec![Mode { amp: 2.0, freq: 3.0, phase: 0.5 }]).unwrap();
        assert_eq!(f.to_string(), "1.0 + 2.0*cos(3.0*t + 0.5)");
    }

    #[test]
    fn structured_form_deserializes_and_validates() {
        let f: QpFunction =
            serde_json::from_str(r#"{"offset": 1.0, "modes": [{"amp": 2.0, "freq": 1.0, "phase": 7.0}]}"#)
                .unwrap();
        assert!((f.modes()[0].phase - (7.0 - TAU)).abs() < 1e-15);
        assert!(serde_json::from_str::<QpFunction>(
            r#"{"offset": 1.0, "modes": [{"amp": 2.0, "freq": 0.0, "phase": 0.0}]}"#
        )
        .is_err());
    }

    fn arb_qp() -> impl Strategy<Value = QpFunction> {
        (
            -3.0..3.0f64,
            prop::collection::vec((-2.0..2.0f64, 0.05..4.0f64, -10.0..10.0f64), 0..5),
        )
            .prop_map(|(offset, modes)| {
                QpFunction::new(
                    offset,
                    modes
                        .into_iter()
                        .map(|(amp, freq, phase)| Mode { amp, freq, phase })
                        .collect(),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn sampled_values_respect_bound(f in arb_qp(), t0 in -1e3..1e3f64) {
            let b = f.sup_bound();
            for k in 0..200 {
                prop_assert!(f.eval(t0 + k as f64 * 0.173).abs() <= b + 1e-12);
            }
        }

        #[test]
        fn shift_consistency(f in arb_qp(), tau in -100.0..100.0f64, t in -100.0..100.0f64) {
            prop_assert!((f.shift(tau).eval(t) - f.eval(t + tau)).abs() < 1e-12 * (1.0 + f.sup_bound()));
        }

        #[test]
        fn phases_stay_wrapped(f in arb_qp(), tau in -1e4..1e4f64) {
            for m in f.shift(tau).modes() {
                prop_assert!((0.0..TAU).contains(&m.phase));
            }
        }

        #[test]
        fn deviation_is_symmetric(f in arb_qp(), tau in 0.1..50.0f64) {
            let est = SupEstimator { span: 50.0, step: 0.05 };
            prop_assert_eq!(shift_deviation(&f, tau, &est), shift_deviation(&f, -tau, &est));
        }
    }

    #[test]
    fn detection_symmetric_under_mirrored_scan() {
        let f = two_tone();
        let est = SupEstimator { span: 100.0, step: 0.02 };
        let grid: Vec<f64> = (0..400).map(|k| 70.0 + k as f64 * 0.05).collect();
        let mirrored: Vec<f64> = grid.iter().rev().map(|t| -t).collect();
        let pos = almost_periods_on_grid(&f, 0.3, (70.0, 89.95), &grid, &est);
        let neg = almost_periods_on_grid(&f, 0.3, (-89.95, -70.0), &mirrored, &est);
        for tau in pos.detected_periods.iter().filter(|t| grid.contains(t)) {
            assert!(neg.detected_periods.contains(&-tau));
        }
    }

    #[test]
    fn detection_monotone_in_epsilon() {
        let f = two_tone();
        let est = SupEstimator { span: 100.0, step: 0.02 };
        let small = almost_periods_with(&f, 0.15, (1.0, 120.0), 0.05, &est).unwrap();
        let large = almost_periods_with(&f, 0.3, (1.0, 120.0), 0.05, &est).unwrap();
        for p in &small.detected_periods {
            assert!(large.detected_periods.contains(p), "period {p} lost at larger epsilon");
        }
    }
}
