//! Bounded-Lipschitz distance
//! `ρ(μ,ν) = sup{ ∫f d(μ−ν) : ‖f‖_L + ‖f‖_∞ ≤ 1 }`.
//!
//! For atoms `x_1..x_n` (union support) with signed mass `w_i = μ_i − ν_i`
//! the supremum is the linear program
//!
//! ```text
//! max Σ w_i f_i   s.t. |f_i| ≤ a,  |f_i − f_j| ≤ (1−a)|x_i − x_j|,  0 ≤ a ≤ 1
//! ```
//!
//! since any feasible vector extends to `R^d` without raising either norm.
//! For fixed `a` the optimum `g(a)` is concave in `a`. In one dimension only
//! neighbouring constraints matter and `g(a)` is computed in linear time by
//! a dynamic program over concave piecewise-linear value functions; the outer
//! maximization over `a` is a golden-section search. In higher dimension the
//! LP is solved by [`super::simplex`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{simplex, stratified_indices, EmpiricalMeasure, MeasureError};

/// Union-support limit for the LP route.
pub const DEFAULT_MAX_SUPPORT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlOptions {
    pub max_support: usize,
    /// Thin oversized measures instead of failing.
    pub subsample: bool,
    pub seed: u64,
}

impl Default for BlOptions {
    fn default() -> Self {
        Self {
            max_support: DEFAULT_MAX_SUPPORT,
            subsample: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlResult {
    pub value: f64,
    pub subsampled: bool,
}

pub fn bl_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    bl_distance_with(mu, nu, &BlOptions::default()).map(|r| r.value)
}

pub fn bl_distance_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    opts: &BlOptions,
) -> Result<BlResult, MeasureError> {
    check_dims(mu, nu)?;
    if mu.dim() == 1 {
        let (x, w) = signed_union(mu, nu);
        return Ok(BlResult {
            value: bl_1d(&x, &w),
            subsampled: false,
        });
    }
    let (pts, w) = signed_union(mu, nu);
    if w.len() <= opts.max_support {
        return Ok(BlResult {
            value: simplex::bl_lp(&pts, mu.dim(), &w)?,
            subsampled: false,
        });
    }
    if !opts.subsample {
        return Err(MeasureError::SupportTooLarge {
            n: w.len(),
            limit: opts.max_support,
        });
    }
    let half = (opts.max_support / 2).max(1);
    let thin = |m: &EmpiricalMeasure| {
        if m.len() <= half {
            m.clone()
        } else {
            let idx = stratified_indices(m.weights(), half, opts.seed);
            let mut pts = Vec::with_capacity(half * m.dim());
            for &i in &idx {
                pts.extend_from_slice(m.point(i));
            }
            EmpiricalMeasure {
                dim: m.dim(),
                points: pts,
                weights: vec![1.0 / half as f64; half],
            }
        }
    };
    let (pts, w) = signed_union(&thin(mu), &thin(nu));
    Ok(BlResult {
        value: simplex::bl_lp(&pts, mu.dim(), &w)?,
        subsampled: true,
    })
}

fn check_dims(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<(), MeasureError> {
    if mu.dim() != nu.dim() {
        return Err(MeasureError::DimensionMismatch {
            expected: mu.dim(),
            got: nu.dim(),
        });
    }
    Ok(())
}

/// Distinct atoms of `μ ∪ ν` with masses `±(μ_i − ν_i)`, in lexicographic
/// order. The sign is fixed so the first nonzero mass is positive, which makes
/// the result invariant under swapping `μ` and `ν` bit for bit.
pub(crate) fn signed_union(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> (Vec<f64>, Vec<f64>) {
    let d = mu.dim();
    let mut atoms: Vec<(&[f64], f64, bool)> = (0..mu.len())
        .map(|i| (mu.point(i), mu.weights()[i], true))
        .chain((0..nu.len()).map(|i| (nu.point(i), nu.weights()[i], false)))
        .collect();
    atoms.sort_by(|a, b| {
        a.0.iter()
            .zip(b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut pts: Vec<f64> = Vec::with_capacity(atoms.len() * d);
    let mut mass: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (p, m, from_mu) in atoms {
        if mass.is_empty() || &pts[pts.len() - d..] != p {
            pts.extend_from_slice(p);
            mass.push((0.0, 0.0));
        }
        let last = mass.last_mut().unwrap();
        if from_mu {
            last.0 += m;
        } else {
            last.1 += m;
        }
    }
    let mut w: Vec<f64> = mass.iter().map(|(a, b)| a - b).collect();
    if w.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0) {
        w.iter_mut().for_each(|v| *v = -*v);
    }
    (pts, w)
}

/// Exact one-dimensional distance for sorted distinct `x` and signed masses `w`.
pub(crate) fn bl_1d(x: &[f64], w: &[f64]) -> f64 {
    if w.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let gaps: Vec<f64> = x.windows(2).map(|p| p[1] - p[0]).collect();
    let g = |a: f64| value_at_budget(w, &gaps, a);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (mut glo, mut ghi) = (g(lo), g(hi));
    let mut a1 = hi - phi * (hi - lo);
    let mut a2 = lo + phi * (hi - lo);
    let (mut g1, mut g2) = (g(a1), g(a2));
    let mut best = glo.max(ghi).max(g1).max(g2);
    for _ in 0..80 {
        // g is concave, so secants through the four samples bound it from
        // above; once the bracket sits on the two linear pieces around the
        // maximum the bound is attained and the search can stop.
        if concave_upper_bound([lo, a1, a2, hi], [glo, g1, g2, ghi]) - best <= 1e-14 + 1e-12 * best {
            break;
        }
        if g1 < g2 {
            lo = a1;
            glo = g1;
            a1 = a2;
            g1 = g2;
            a2 = lo + phi * (hi - lo);
            g2 = g(a2);
        } else {
            hi = a2;
            ghi = g2;
            a2 = a1;
            g2 = g1;
            a1 = hi - phi * (hi - lo);
            g1 = g(a1);
        }
        best = best.max(g1).max(g2);
    }
    best.clamp(0.0, 2.0)
}

/// Upper bound on `max g` over `[x0, x3]` for concave `g` sampled at
/// `x0 < x1 < x2 < x3`.
fn concave_upper_bound(x: [f64; 4], y: [f64; 4]) -> f64 {
    let slope = |i: usize, j: usize| (y[j] - y[i]) / (x[j] - x[i]);
    let s12 = slope(1, 2);
    let outer_left = y[1] + (-s12 * (x[1] - x[0])).max(0.0);
    let outer_right = y[2] + (s12 * (x[3] - x[2])).max(0.0);
    let (sl, sr) = (slope(0, 1), slope(2, 3));
    let line_l = |t: f64| y[1] + sl * (t - x[1]);
    let line_r = |t: f64| y[2] + sr * (t - x[2]);
    let inner = if sl > sr {
        let t = ((y[2] - y[1] + sl * x[1] - sr * x[2]) / (sl - sr)).clamp(x[1], x[2]);
        line_l(t).min(line_r(t))
    } else {
        line_l(x[1]).min(line_r(x[1])).max(line_l(x[2]).min(line_r(x[2])))
    };
    outer_left.max(outer_right).max(inner).max(y[1]).max(y[2])
}

/// Breakpoint of a concave piecewise-linear function: position (before the
/// lazy offset of its deque) and the slope decrease across it.
#[derive(Clone, Copy)]
struct Kink {
    pos: f64,
    drop: f64,
}

/// `g(a) = max Σ w_i f_i` over `|f_i| ≤ a`, `|f_{i+1} − f_i| ≤ (1−a)·gap_i`.
///
/// Forward recursion `F_{i+1}(v) = w_{i+1} v + max_{|u−v| ≤ r_i} F_i(u)` on
/// `[−a, a]`. `F` is kept as its peak `p` with value `m`, the slopes `sl`/`sr`
/// of the segments adjacent to `p` (infinite at the domain ends) and two
/// deques of kinks left and right of `p`.
pub(crate) fn value_at_budget(w: &[f64], gaps: &[f64], a: f64) -> f64 {
    let mut left: VecDeque<Kink> = VecDeque::new();
    let mut right: VecDeque<Kink> = VecDeque::new();
    let (mut off_l, mut off_r) = (0.0f64, 0.0f64);
    let mut p = 0.0f64;
    let mut m = 0.0f64;
    let mut sl = 0.0f64;
    let mut sr = 0.0f64;
    if a <= 0.0 {
        return 0.0;
    }

    for (i, &wi) in w.iter().enumerate() {
        if i > 0 {
            // Dilation by the Lipschitz radius.
            let r = (1.0 - a) * gaps[i - 1];
            if r > 0.0 {
                off_l -= r;
                off_r += r;
                let q = p + r;
                if q < a && sr < 0.0 {
                    right.push_front(Kink {
                        pos: q - off_r,
                        drop: -sr,
                    });
                }
                sr = 0.0;
                p -= r;
                if p <= -a {
                    p = -a;
                    left.clear();
                    sl = f64::INFINITY;
                }
                while left.front().is_some_and(|k| k.pos + off_l <= -a) {
                    left.pop_front();
                }
                while right.back().is_some_and(|k| k.pos + off_r >= a) {
                    right.pop_back();
                }
            }
        }

        sl += wi;
        sr += wi;
        m += wi * p;
        while sr > 0.0 {
            let (q, next) = match right.front() {
                Some(k) => (k.pos + off_r, Some(k.drop)),
                None => (a, None),
            };
            m += sr * (q - p);
            if sl.is_finite() && sl > sr {
                left.push_back(Kink {
                    pos: p - off_l,
                    drop: sl - sr,
                });
            }
            sl = sr;
            p = q;
            match next {
                Some(d) => {
                    right.pop_front();
                    sr = sl - d;
                }
                None => sr = f64::NEG_INFINITY,
            }
        }
        while sl < 0.0 {
            let (q, next) = match left.back() {
                Some(k) => (k.pos + off_l, Some(k.drop)),
                None => (-a, None),
            };
            m += sl * (q - p);
            if sr.is_finite() && sr < sl {
                right.push_front(Kink {
                    pos: p - off_r,
                    drop: sl - sr,
                });
            }
            sr = sl;
            p = q;
            match next {
                Some(d) => {
                    left.pop_back();
                    sl = sr + d;
                }
                None => sl = f64::INFINITY,
            }
        }
    }
    m
}

/// `max_k ρ(π_k μ, π_k ν)` over coordinate projections, a lower bound for
/// `ρ(μ, ν)` because projections are 1-Lipschitz.
pub fn bl_lower_bound_projections(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_dims(mu, nu)?;
    Ok((0..mu.dim())
        .map(|k| {
            let (x, w) = signed_union(&mu.project(k), &nu.project(k));
            bl_1d(&x, &w)
        })
        .fold(0.0, f64::max))
}

/// Upper bound from a coupling: `Σ_k w_k·2d_k/(2+d_k)` under the index
/// coupling when both measures carry identical weight vectors, otherwise
/// the total-variation bound `Σ|μ_i − ν_i|`.
pub fn bl_upper_bound_aligned(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    check_dims(mu, nu)?;
    let (_, w) = signed_union(mu, nu);
    let tv: f64 = w.iter().map(|v| v.abs()).sum();
    if mu.len() != nu.len() || mu.weights() != nu.weights() {
        return Ok(tv.min(2.0));
    }
    let coupled: f64 = (0..mu.len())
        .map(|k| {
            let d = mu
                .point(k)
                .iter()
                .zip(nu.point(k))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            mu.weights()[k] * 2.0 * d / (2.0 + d)
        })
        .sum();
    Ok(coupled.min(tv).min(2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dirac(x: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::dirac(&[x])
    }

    #[test]
    fn dirac_formula() {
        for x in [0.5, 1.0, 2.0, 5.0, 0.01, 40.0] {
            let v = bl_distance(&dirac(0.0), &dirac(x)).unwrap();
            assert!((v - 2.0 * x / (2.0 + x)).abs() < 1e-9, "x = {x}: {v}");
        }
        assert_eq!(bl_distance(&dirac(0.0), &dirac(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn dirac_formula_in_three_dimensions() {
        let a = EmpiricalMeasure::dirac(&[0.0, 0.0, 0.0]);
        let b = EmpiricalMeasure::dirac(&[1.0, 2.0, 2.0]);
        assert!((bl_distance(&a, &b).unwrap() - 6.0 / 5.0).abs() < 1e-9);
    }

    #[test]
    fn far_pairs_still_bind() {
        // Budget a = 5/7 here, so the pair at distance 5 constrains the optimum.
        let v = bl_distance(&EmpiricalMeasure::dirac(&[0.0, 0.0]), &EmpiricalMeasure::dirac(&[3.0, 4.0])).unwrap();
        assert!((v - 10.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch() {
        let a = EmpiricalMeasure::dirac(&[0.0]);
        let b = EmpiricalMeasure::dirac(&[0.0, 1.0]);
        assert!(matches!(bl_distance(&a, &b), Err(MeasureError::DimensionMismatch { .. })));
    }

    #[test]
    fn oversized_support_without_subsampling_fails() {
        let pts: Vec<f64> = (0..600).flat_map(|i| [i as f64 * 0.01, 0.0]).collect();
        let mu = EmpiricalMeasure::uniform(2, pts.clone()).unwrap();
        let nu = mu.translate(&[0.0, 0.1]);
        let opts = BlOptions {
            subsample: false,
            ..BlOptions::default()
        };
        assert!(matches!(
            bl_distance_with(&mu, &nu, &opts),
            Err(MeasureError::SupportTooLarge { .. })
        ));
        let small = BlOptions {
            max_support: 60,
            ..BlOptions::default()
        };
        let r = bl_distance_with(&mu, &nu, &small).unwrap();
        assert!(r.subsampled);
        assert!((r.value - 0.2 / 2.1).abs() < 1e-9);
    }

    #[test]
    fn bounds_bracket_exact_value() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.0, 0.0, 1.0, 0.5, -0.3, 2.0]).unwrap();
        let nu = EmpiricalMeasure::uniform(2, vec![0.2, 0.1, 1.5, 0.0, 0.0, 2.2]).unwrap();
        let exact = bl_distance(&mu, &nu).unwrap();
        let lo = bl_lower_bound_projections(&mu, &nu).unwrap();
        let hi = bl_upper_bound_aligned(&mu, &nu).unwrap();
        assert!(lo <= exact + 1e-9 && exact <= hi + 1e-9, "{lo} {exact} {hi}");
    }

    fn arb_measure_1d(max_atoms: usize) -> impl Strategy<Value = EmpiricalMeasure> {
        prop::collection::vec((-4.0..4.0f64, 0.05..1.0f64), 1..=max_atoms).prop_map(|atoms| {
            let (x, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
            EmpiricalMeasure::normalized(1, x, w).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dynamic_program_matches_simplex(mu in arb_measure_1d(8), nu in arb_measure_1d(8)) {
            let (x, w) = signed_union(&mu, &nu);
            let lp = simplex::bl_lp(&x, 1, &w).unwrap();
            prop_assert!((bl_1d(&x, &w) - lp).abs() < 1e-9);
        }

        #[test]
        fn symmetric(mu in arb_measure_1d(6), nu in arb_measure_1d(6)) {
            prop_assert_eq!(bl_distance(&mu, &nu).unwrap(), bl_distance(&nu, &mu).unwrap());
        }
    }
}
