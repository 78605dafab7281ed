//! Distances between laws given either as atoms or as Gaussians.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};

use super::bl::{bl_1d, bl_distance_with, bl_upper_bound_aligned, signed_union, BlOptions};
use super::{discretize_gaussian_with, standard_normal_quantiles, EmpiricalMeasure, GaussianLaw, Law, MeasureError};

/// Atoms per Gaussian law in [`GaussianMode::Atoms`].
pub const GAUSSIAN_ATOMS: usize = 512;
/// Nodes of the common grid in [`GaussianMode::DensityGrid`].
pub const DENSITY_GRID_POINTS: usize = 512;
/// Half-width of the density grid in standard deviations.
const DENSITY_GRID_SIGMAS: f64 = 8.0;
/// Smallest standard deviation, in grid spacings, for the density route.
const MIN_SIGMA_CELLS: f64 = 4.0;

/// How two one-dimensional Gaussian laws are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussianMode {
    /// BL between the two quantile discretizations.
    Atoms,
    /// BL of the signed density difference sampled on a common grid. Free of
    /// the atom-spacing floor that inflates `Atoms` for tiny shifts; falls
    /// back to `Atoms` when a law is too narrow for the grid.
    DensityGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawDistanceOptions {
    pub gaussian_atoms: usize,
    pub gaussian_mode: GaussianMode,
    pub bl: BlOptions,
}

impl Default for LawDistanceOptions {
    fn default() -> Self {
        Self {
            gaussian_atoms: GAUSSIAN_ATOMS,
            gaussian_mode: GaussianMode::DensityGrid,
            bl: BlOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LawDistance {
    pub value: f64,
    pub subsampled: bool,
    /// The value is the coupling upper bound rather than the exact metric.
    pub upper_bound: bool,
}

/// A law reduced to atoms, keeping the Gaussian parameters if it had them.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    pub atoms: EmpiricalMeasure,
    pub gaussian: Option<GaussianLaw>,
}

/// Discretizes every law of a sequence with one shared quantile table, so
/// Gaussian laws of equal dimension use the same standard atoms.
pub fn discretize_laws(laws: &[Law], opts: &LawDistanceOptions) -> Result<Vec<Discretized>, MeasureError> {
    let q = standard_normal_quantiles(opts.gaussian_atoms.max(1));
    laws.iter()
        .map(|law| match law {
            Law::Empirical(m) => Ok(Discretized {
                atoms: m.clone(),
                gaussian: None,
            }),
            Law::Gaussian(g) => Ok(Discretized {
                atoms: discretize_gaussian_with(g, &q, opts.bl.seed)?,
                gaussian: Some(g.clone()),
            }),
        })
        .collect()
}

/// Signed density difference of two scalar Gaussians sampled on a common
/// grid, or `None` if one of them is too narrow for the grid.
fn density_grid(g1: &GaussianLaw, g2: &GaussianLaw) -> Option<(Vec<f64>, Vec<f64>)> {
    let (m1, m2) = (g1.mean()[0], g2.mean()[0]);
    let (s1, s2) = (g1.covariance()[0].max(0.0).sqrt(), g2.covariance()[0].max(0.0).sqrt());
    let lo = (m1 - DENSITY_GRID_SIGMAS * s1).min(m2 - DENSITY_GRID_SIGMAS * s2);
    let hi = (m1 + DENSITY_GRID_SIGMAS * s1).max(m2 + DENSITY_GRID_SIGMAS * s2);
    let n = DENSITY_GRID_POINTS;
    let dx = (hi - lo) / (n - 1) as f64;
    if !(s1.min(s2) >= MIN_SIGMA_CELLS * dx) {
        return None;
    }
    let (p, q) = (Normal::new(m1, s1).ok()?, Normal::new(m2, s2).ok()?);
    let x: Vec<f64> = (0..n).map(|i| lo + i as f64 * dx).collect();
    let pw: Vec<f64> = x.iter().map(|&v| p.pdf(v)).collect();
    let qw: Vec<f64> = x.iter().map(|&v| q.pdf(v)).collect();
    let (sp, sq) = (pw.iter().sum::<f64>(), qw.iter().sum::<f64>());
    let w: Vec<f64> = pw.iter().zip(&qw).map(|(a, b)| a / sp - b / sq).collect();
    Some((x, w))
}

/// Sorted one-dimensional signed representation used for the exact value.
fn signed_1d(a: &Discretized, b: &Discretized, opts: &LawDistanceOptions) -> Option<(Vec<f64>, Vec<f64>)> {
    if a.atoms.dim() != 1 || b.atoms.dim() != 1 {
        return None;
    }
    if let (Some(ga), Some(gb)) = (&a.gaussian, &b.gaussian) {
        if opts.gaussian_mode == GaussianMode::DensityGrid {
            if let Some(rep) = density_grid(ga, gb) {
                return Some(rep);
            }
        }
    }
    Some(signed_union(&a.atoms, &b.atoms))
}

/// `ρ ≤ T·W/(T+W)` for a balanced signed measure on the line, with `T` its
/// total variation and `W` its transport cost: a test function bounded by
/// `a` earns at most `aT`, one with Lipschitz constant `1−a` at most
/// `(1−a)W`.
fn tv_transport_bound(x: &[f64], w: &[f64]) -> f64 {
    let tv: f64 = w.iter().map(|v| v.abs()).sum();
    let mut cum = 0.0;
    let mut transport = 0.0;
    for i in 0..w.len().saturating_sub(1) {
        cum += w[i];
        transport += cum.abs() * (x[i + 1] - x[i]);
    }
    let imbalance = w.iter().sum::<f64>().abs();
    if tv == 0.0 {
        return 0.0;
    }
    if imbalance > 1e-12 {
        return tv.min(2.0);
    }
    (tv * transport / (tv + transport)).min(2.0)
}

/// `ρ` between two discretized laws.
///
/// One-dimensional values are exact for the representation used. In higher
/// dimension two Gaussians are compared through the index coupling of their
/// shared standard atoms (an upper bound); other pairs go through the LP,
/// subsampled when the union support is too large.
pub fn discretized_distance(
    a: &Discretized,
    b: &Discretized,
    opts: &LawDistanceOptions,
) -> Result<LawDistance, MeasureError> {
    if a.atoms.dim() != b.atoms.dim() {
        return Err(MeasureError::DimensionMismatch {
            expected: a.atoms.dim(),
            got: b.atoms.dim(),
        });
    }
    if let Some((x, w)) = signed_1d(a, b, opts) {
        return Ok(LawDistance {
            value: bl_1d(&x, &w),
            subsampled: false,
            upper_bound: false,
        });
    }
    if a.gaussian.is_some() && b.gaussian.is_some() {
        return Ok(LawDistance {
            value: bl_upper_bound_aligned(&a.atoms, &b.atoms)?,
            subsampled: false,
            upper_bound: true,
        });
    }
    let r = bl_distance_with(&a.atoms, &b.atoms, &opts.bl)?;
    Ok(LawDistance {
        value: r.value,
        subsampled: r.subsampled,
        upper_bound: false,
    })
}

/// Cheap bound with `discretized_distance(a, b) ≤ bound`, up to the
/// tolerance of the one-dimensional solver.
pub fn discretized_upper_bound(a: &Discretized, b: &Discretized, opts: &LawDistanceOptions) -> Result<f64, MeasureError> {
    if let Some((x, w)) = signed_1d(a, b, opts) {
        return Ok(tv_transport_bound(&x, &w) + 1e-12);
    }
    if a.gaussian.is_some() && b.gaussian.is_some() {
        return bl_upper_bound_aligned(&a.atoms, &b.atoms);
    }
    Ok(2.0)
}

pub fn law_distance(a: &Law, b: &Law, opts: &LawDistanceOptions) -> Result<LawDistance, MeasureError> {
    let d = discretize_laws(&[a.clone(), b.clone()], opts)?;
    discretized_distance(&d[0], &d[1], opts)
}
