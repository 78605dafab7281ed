//! Probability measures on `R^d`: weighted atoms, Gaussian laws, law paths,
//! and the distances between them.
//!
//! The bounded-Lipschitz distance lives in [`bl`]; the norm of a test
//! function is `‖f‖_L + ‖f‖_∞`.

mod bl;
pub mod io;
mod law;
mod simplex;

pub use bl::{
    bl_distance, bl_distance_with, bl_lower_bound_projections, bl_upper_bound_aligned, BlOptions,
    BlResult, DEFAULT_MAX_SUPPORT,
};
pub use law::{
    discretize_laws, discretized_distance, discretized_upper_bound, law_distance, Discretized, GaussianMode, LawDistance,
    LawDistanceOptions, DENSITY_GRID_POINTS, GAUSSIAN_ATOMS,
};

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

/// Tolerance on `Σ weights = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_CLIP_TOL` are clipped to zero silently.
pub const PSD_CLIP_TOL: f64 = 1e-10;
/// Eigenvalues below `-PSD_FAIL_TOL` are rejected.
pub const PSD_FAIL_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("union support of {n} atoms exceeds the solver limit {limit}")]
    SupportTooLarge { n: usize, limit: usize },
    #[error("covariance is not positive semidefinite (smallest eigenvalue {0:e})")]
    NonPsdCovariance(f64),
    #[error("covariance is not symmetric")]
    NotSymmetric,
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error("linear program failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Finitely many weighted atoms; points are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 {
            return Err(MeasureError::Invalid("dimension must be at least 1".into()));
        }
        if weights.is_empty() {
            return Err(MeasureError::Invalid("at least one atom required".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(MeasureError::DimensionMismatch {
                expected: dim * weights.len(),
                got: points.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(MeasureError::Invalid("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(MeasureError::Invalid("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(MeasureError::Invalid(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            dim,
            points,
            weights,
        })
    }

    /// Equal weights on the given atoms.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self, MeasureError> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(MeasureError::Invalid("points do not form whole atoms".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(MeasureError::Invalid("non-finite coordinate".into()));
        }
        let n = points.len() / dim;
        Ok(Self {
            dim,
            points,
            weights: vec![1.0 / n as f64; n],
        })
    }

    /// Rescales nonnegative weights to total mass 1.
    pub fn normalized(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(MeasureError::Invalid("total mass must be positive".into()));
        }
        Self::new(dim, points, weights.iter().map(|w| w / total).collect())
    }

    pub fn from_samples_1d(xs: &[f64]) -> Result<Self, MeasureError> {
        Self::uniform(1, xs.to_vec())
    }

    pub fn dirac(point: &[f64]) -> Self {
        Self {
            dim: point.len().max(1),
            points: if point.is_empty() { vec![0.0] } else { point.to_vec() },
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (i, w) in self.weights.iter().enumerate() {
            for (mk, xk) in m.iter_mut().zip(self.point(i)) {
                *mk += w * xk;
            }
        }
        m
    }

    /// Weighted covariance (population form), row-major `d×d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for (i, w) in self.weights.iter().enumerate() {
            let x = self.point(i);
            for a in 0..d {
                for b in 0..d {
                    c[a * d + b] += w * (x[a] - m[a]) * (x[b] - m[b]);
                }
            }
        }
        c
    }

    /// Image under the coordinate projection `x ↦ x_k`.
    pub fn project(&self, k: usize) -> Self {
        Self {
            dim: 1,
            points: (0..self.len()).map(|i| self.point(i)[k]).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Translation by `v`.
    pub fn translate(&self, v: &[f64]) -> Self {
        let mut points = self.points.clone();
        for row in points.chunks_mut(self.dim) {
            for (x, s) in row.iter_mut().zip(v) {
                *x += s;
            }
        }
        Self {
            dim: self.dim,
            points,
            weights: self.weights.clone(),
        }
    }

    /// Stratified resampling to `m` equally weighted atoms: atom `k` is drawn
    /// at cumulative mass `(k + U_k)/m`.
    pub fn stratified_resample(&self, m: usize, seed: u64) -> Self {
        let idx = stratified_indices(&self.weights, m, seed);
        let mut points = Vec::with_capacity(m * self.dim);
        for &i in &idx {
            points.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            points,
            weights: vec![1.0 / m as f64; m],
        }
    }
}

pub(crate) fn stratified_indices(weights: &[f64], m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..m {
        let u = (k as f64 + rng.gen::<f64>()) / m as f64;
        while u >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

/// Gaussian law with row-major covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    mean: Vec<f64>,
    covariance: Vec<f64>,
}

impl GaussianLaw {
    /// Accepts covariances symmetric to `1e-10` relative to their scale and
    /// symmetrizes them.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self, MeasureError> {
        let d = mean.len();
        if d == 0 {
            return Err(MeasureError::Invalid("empty mean".into()));
        }
        if covariance.len() != d * d {
            return Err(MeasureError::DimensionMismatch {
                expected: d * d,
                got: covariance.len(),
            });
        }
        if mean.iter().chain(&covariance).any(|v| !v.is_finite()) {
            return Err(MeasureError::Invalid("non-finite Gaussian parameter".into()));
        }
        let scale = covariance.iter().fold(1.0f64, |s, c| s.max(c.abs()));
        let mut cov = covariance;
        for i in 0..d {
            for j in i + 1..d {
                let (a, b) = (cov[i * d + j], cov[j * d + i]);
                if (a - b).abs() > 1e-10 * scale {
                    return Err(MeasureError::NotSymmetric);
                }
                let s = 0.5 * (a + b);
                cov[i * d + j] = s;
                cov[j * d + i] = s;
            }
        }
        Ok(Self {
            mean,
            covariance: cov,
        })
    }

    pub fn scalar(mean: f64, variance: f64) -> Result<Self, MeasureError> {
        Self::new(vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    /// Factor `L` with `L Lᵀ = Σ`: Cholesky when `Σ` is safely definite (so
    /// the factor varies continuously along a path of laws), otherwise the
    /// eigen factor after clipping small negative eigenvalues.
    pub fn factor(&self) -> Result<Vec<f64>, MeasureError> {
        let d = self.dim();
        if d == 1 {
            let v = self.covariance[0];
            if v < -PSD_FAIL_TOL {
                return Err(MeasureError::NonPsdCovariance(v));
            }
            return Ok(vec![v.max(0.0).sqrt()]);
        }
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &self.covariance));
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -PSD_FAIL_TOL {
            return Err(MeasureError::NonPsdCovariance(min));
        }
        let scale = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if min > PSD_CLIP_TOL * scale.max(1.0) {
            if let Some(ch) = Cholesky::new(DMatrix::from_row_slice(d, d, &self.covariance)) {
                let lm = ch.l();
                return Ok((0..d * d).map(|k| lm[(k / d, k % d)]).collect());
            }
        }
        let mut l = vec![0.0; d * d];
        for k in 0..d {
            let s = eig.eigenvalues[k].max(0.0).sqrt();
            for i in 0..d {
                l[i * d + k] = eig.eigenvectors[(i, k)] * s;
            }
        }
        Ok(l)
    }
}

/// Standard normal quantiles at `(i − ½)/n`, `i = 1..n`.
pub fn standard_normal_quantiles(n: usize) -> Vec<f64> {
    let z = Normal::standard();
    (0..n)
        .map(|i| z.inverse_cdf((i as f64 + 0.5) / n as f64))
        .collect()
}

/// `n` equally weighted atoms approximating `g`.
///
/// In one dimension atom `i` sits at quantile `(i − ½)/n`, independent of the
/// seed. In higher dimension each coordinate of a standard normal sample is
/// stratified the same way and the coordinates are decoupled by seeded
/// permutations (Latin hypercube), then mapped through the covariance factor.
pub fn discretize_gaussian(g: &GaussianLaw, n: usize, seed: u64) -> Result<EmpiricalMeasure, MeasureError> {
    discretize_gaussian_with(g, &standard_normal_quantiles(n.max(1)), seed)
}

/// As [`discretize_gaussian`] with precomputed standard quantiles.
pub fn discretize_gaussian_with(
    g: &GaussianLaw,
    quantiles: &[f64],
    seed: u64,
) -> Result<EmpiricalMeasure, MeasureError> {
    let n = quantiles.len();
    if n == 0 {
        return Err(MeasureError::Invalid("need at least one atom".into()));
    }
    let d = g.dim();
    let l = g.factor()?;
    let mut points = vec![0.0; n * d];
    if d == 1 {
        for (p, z) in points.iter_mut().zip(quantiles) {
            *p = g.mean[0] + l[0] * z;
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = vec![0.0; n * d];
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..d {
            perm.shuffle(&mut rng);
            for i in 0..n {
                z[i * d + k] = quantiles[perm[i]];
            }
        }
        for i in 0..n {
            for a in 0..d {
                let mut s = g.mean[a];
                for b in 0..d {
                    s += l[a * d + b] * z[i * d + b];
                }
                points[i * d + a] = s;
            }
        }
    }
    Ok(EmpiricalMeasure {
        dim: d,
        points,
        weights: vec![1.0 / n as f64; n],
    })
}

/// Either representation of a law at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Law {
    Empirical(EmpiricalMeasure),
    Gaussian(GaussianLaw),
}

impl Law {
    pub fn dim(&self) -> usize {
        match self {
            Law::Empirical(m) => m.dim(),
            Law::Gaussian(g) => g.dim(),
        }
    }
}

/// The map `t ↦ law at t` sampled on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurePath {
    times: Vec<f64>,
    laws: Vec<Law>,
}

impl MeasurePath {
    pub fn new(times: Vec<f64>, laws: Vec<Law>) -> Result<Self, MeasureError> {
        if times.len() != laws.len() {
            return Err(MeasureError::InvalidPath(format!(
                "{} times but {} laws",
                times.len(),
                laws.len()
            )));
        }
        if times.is_empty() {
            return Err(MeasureError::InvalidPath("empty path".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MeasureError::InvalidPath("times must be strictly increasing".into()));
        }
        let d = laws[0].dim();
        if let Some(bad) = laws.iter().find(|l| l.dim() != d) {
            return Err(MeasureError::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self { times, laws })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn laws(&self) -> &[Law] {
        &self.laws
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.laws[0].dim()
    }

    /// Uniform step if the grid is uniform to relative `1e-9`.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let n = self.times.len() - 1;
        let h = (self.times[n] - self.times[0]) / n as f64;
        self.times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.max(1.0))
            .then_some(h)
    }
}

/// Kantorovich distance in one dimension, `∫|F_μ − F_ν| dx`.
pub fn w1_distance_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    for m in [mu, nu] {
        if m.dim() != 1 {
            return Err(MeasureError::DimensionMismatch {
                expected: 1,
                got: m.dim(),
            });
        }
    }
    let mut ev: Vec<(f64, f64)> = mu
        .points
        .iter()
        .zip(&mu.weights)
        .map(|(&x, &w)| (x, w))
        .chain(nu.points.iter().zip(&nu.weights).map(|(&x, &w)| (x, -w)))
        .collect();
    ev.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_diff = 0.0;
    let mut total = 0.0;
    for k in 0..ev.len() {
        cdf_diff += ev[k].1;
        if k + 1 < ev.len() {
            total += cdf_diff.abs() * (ev[k + 1].0 - ev[k].0);
        }
    }
    Ok(total)
}

/// Law of `X + Y` for independent `X ~ μ`, `Y ~ ν`, approximated by a seeded
/// random pairing of `max(|μ|, |ν|)` stratified resamples of each.
pub fn convolve(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, seed: u64) -> Result<EmpiricalMeasure, MeasureError> {
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    let d = mu.dim();
    let m = mu.len().max(nu.len());
    let a = mu.stratified_resample(m, seed);
    let b = nu.stratified_resample(m, seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    let mut points = Vec::with_capacity(m * d);
    for (i, &j) in order.iter().enumerate() {
        points.extend(a.point(i).iter().zip(b.point(j)).map(|(x, y)| x + y));
    }
    Ok(EmpiricalMeasure {
        dim: d,
        points,
        weights: vec![1.0 / m as f64; m],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac1(x: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(&[x])
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(EmpiricalMeasure::new(2, vec![0.0, 1.0, 2.0], vec![0.5, 0.5]).is_err());
        assert!(EmpiricalMeasure::new(1, vec![], vec![]).is_err());
    }

    #[test]
    fn uniform_handles_many_atoms() {
        let m = EmpiricalMeasure::uniform(1, (0..30_000).map(|i| i as f64).collect()).unwrap();
        assert_eq!(m.len(), 30_000);
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn w1_examples() {
        assert_eq!(w1_distance_1d(&dirac1(0.0), &dirac1(2.0)).unwrap(), 2.0);
        let m = EmpiricalMeasure::uniform(1, vec![0.3, -1.0, 4.0]).unwrap();
        assert_eq!(w1_distance_1d(&m, &m).unwrap(), 0.0);
        let a = EmpiricalMeasure::uniform(1, vec![0.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::uniform(1, vec![1.0, 2.0]).unwrap();
        assert!((w1_distance_1d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        let p = EmpiricalMeasure::dirac(&[0.0, 0.0]);
        assert!(matches!(
            w1_distance_1d(&p, &p),
            Err(MeasureError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn gaussian_discretization_examples() {
        let g = GaussianLaw::scalar(0.0, 0.0).unwrap();
        let m = discretize_gaussian(&g, 3, 1).unwrap();
        assert_eq!(m.points(), &[0.0, 0.0, 0.0]);

        let g = GaussianLaw::scalar(5.0, 1.0).unwrap();
        let m = discretize_gaussian(&g, 10_000, 1).unwrap();
        assert!((m.mean()[0] - 5.0).abs() < 1e-3);
        // Stratified quantiles slightly under-disperse: variance of the
        // midpoint rule is 1 − O(log n / n).
        assert!((m.covariance()[0] - 1.0).abs() < 2e-3);

        let g = GaussianLaw::new(vec![1.0, -1.0], vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let a = discretize_gaussian(&g, 400, 9).unwrap();
        let b = discretize_gaussian(&g, 400, 9).unwrap();
        assert_eq!(a, b);
        let c = a.covariance();
        assert!((c[0] - 2.0).abs() < 0.1 && (c[1] - 0.5).abs() < 0.1 && (c[3] - 1.0).abs() < 0.1);
    }

    #[test]
    fn non_psd_covariance_rejected() {
        let g = GaussianLaw::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(
            discretize_gaussian(&g, 4, 0),
            Err(MeasureError::NonPsdCovariance(_))
        ));
        let tiny = GaussianLaw::scalar(0.0, -1e-12).unwrap();
        assert!(discretize_gaussian(&tiny, 2, 0).is_ok());
        assert!(GaussianLaw::new(vec![0.0, 0.0], vec![1.0, 0.1, 0.2, 1.0]).is_err());
    }

    #[test]
    fn dirac_convolution() {
        let c = convolve(&dirac1(1.5), &dirac1(-4.0), 3).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.point(0), &[-2.5]);
    }

    #[test]
    fn convolution_moments() {
        let n = 10_000;
        let a = discretize_gaussian(&GaussianLaw::scalar(1.0, 2.0).unwrap(), n, 0).unwrap();
        let b = EmpiricalMeasure::uniform(1, (0..n).map(|i| (i % 7) as f64).collect()).unwrap();
        let c = convolve(&a, &b, 42).unwrap();
        let (ma, mb, mc) = (a.mean()[0], b.mean()[0], c.mean()[0]);
        let (va, vb, vc) = (a.covariance()[0], b.covariance()[0], c.covariance()[0]);
        let se_mean = (vc / n as f64).sqrt();
        assert!((mc - ma - mb).abs() < 4.0 * se_mean);
        // fourth central moment of the sum bounds the variance estimator's spread
        let m4: f64 = (0..n).map(|i| (c.point(i)[0] - mc).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - vc * vc) / n as f64).sqrt();
        assert!((vc - va - vb).abs() < 4.0 * se_var);
    }

    #[test]
    fn path_validation() {
        let l = Law::Empirical(dirac1(0.0));
        assert!(MeasurePath::new(vec![0.0, 1.0], vec![l.clone(), l.clone()]).is_ok());
        assert!(MeasurePath::new(vec![1.0, 1.0], vec![l.clone(), l.clone()]).is_err());
        assert!(MeasurePath::new(vec![0.0], vec![]).is_err());
        let l2 = Law::Empirical(EmpiricalMeasure::dirac(&[0.0, 0.0]));
        assert!(matches!(
            MeasurePath::new(vec![0.0, 1.0], vec![l, l2]),
            Err(MeasureError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stratified_resample_of_uniform_is_identity() {
        let m = EmpiricalMeasure::uniform(1, vec![3.0, 1.0, 2.0, 7.0]).unwrap();
        let r = m.stratified_resample(4, 77);
        assert_eq!(r.points(), m.points());
    }
}
