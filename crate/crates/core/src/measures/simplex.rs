//! Revised simplex for the bounded-Lipschitz LP.
//!
//! The solver works on the dual, which has one equality row per atom plus a
//! row for the budget variable `a`:
//!
//! ```text
//! min Σ d_ij π_ij + θ
//!   u_i − l_i + Σ_j π_ij − Σ_j π_ji = w_i        (row i)
//!  −Σ u_i − Σ l_i + Σ d_ij π_ij + θ − s = 0      (row a)
//!   u, l, π, θ, s ≥ 0
//! ```
//!
//! The simplex multipliers are exactly the primal unknowns `(f, a)`, so
//! pricing a pair column costs `d_ij(1−a) − f_i + f_j` and the `n²` pair
//! columns are generated on demand rather than stored. The basis inverse is
//! dense and refreshed by LU every [`REINVERT_EVERY`] pivots.

use nalgebra::DMatrix;

use super::MeasureError;

const REINVERT_EVERY: usize = 100;
const PRICE_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-9;

struct Lp<'a> {
    n: usize,
    w: &'a [f64],
    dist: Vec<f64>,
}

impl Lp<'_> {
    fn cols(&self) -> usize {
        2 * self.n + 2 + self.n * self.n
    }

    fn theta(&self) -> usize {
        2 * self.n
    }

    /// Nonzeros and cost of column `id`.
    fn column(&self, id: usize, out: &mut Vec<(usize, f64)>) -> f64 {
        let n = self.n;
        out.clear();
        if id < n {
            out.extend([(id, 1.0), (n, -1.0)]);
            0.0
        } else if id < 2 * n {
            out.extend([(id - n, -1.0), (n, -1.0)]);
            0.0
        } else if id == 2 * n {
            out.push((n, 1.0));
            1.0
        } else if id == 2 * n + 1 {
            out.push((n, -1.0));
            0.0
        } else {
            let k = id - 2 * n - 2;
            let (i, j) = (k / n, k % n);
            let d = self.dist[k];
            out.extend([(i, 1.0), (j, -1.0), (n, d)]);
            d
        }
    }
}

/// Optimal value of the LP for atoms `points` (row-major, `dim` columns) with
/// signed masses `w`.
pub(crate) fn bl_lp(points: &[f64], dim: usize, w: &[f64]) -> Result<f64, MeasureError> {
    let n = w.len();
    if w.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (pi, pj) = (&points[i * dim..(i + 1) * dim], &points[j * dim..(j + 1) * dim]);
            dist[i * n + j] = pi
                .iter()
                .zip(pj)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    let lp = Lp { n, w, dist };
    solve(&lp)
}

fn solve(lp: &Lp) -> Result<f64, MeasureError> {
    let n = lp.n;
    let m = n + 1;
    let mut b = lp.w.to_vec();
    b.push(0.0);

    let mut basis: Vec<usize> = (0..n)
        .map(|i| if lp.w[i] >= 0.0 { i } else { n + i })
        .collect();
    basis.push(lp.theta());
    let mut is_basic = vec![false; lp.cols()];
    for &c in &basis {
        is_basic[c] = true;
    }
    let mut cost_b: Vec<f64> = Vec::with_capacity(m);
    let mut scratch = Vec::with_capacity(3);
    for &c in &basis {
        cost_b.push(lp.column(c, &mut scratch));
    }

    let mut binv = vec![0.0; m * m];
    let mut xb = vec![0.0; m];
    reinvert(lp, &basis, &b, &mut binv, &mut xb)?;

    let mut y = vec![0.0; m];
    let mut alpha = vec![0.0; m];
    let mut degenerate_run = 0usize;
    let max_iter = 200 * m + 10_000;

    for iter in 0..max_iter {
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..m {
            let c = cost_b[r];
            if c != 0.0 {
                let row = &binv[r * m..(r + 1) * m];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        let a = y[n];
        let bland = degenerate_run > 2 * m;

        let mut entering: Option<(usize, f64)> = None;
        let mut consider = |id: usize, rc: f64| {
            if rc < -PRICE_TOL && !is_basic[id] {
                match entering {
                    None => entering = Some((id, rc)),
                    Some((_, best)) if !bland && rc < best => entering = Some((id, rc)),
                    _ => {}
                }
            }
        };
        for i in 0..n {
            consider(i, a - y[i]);
        }
        for i in 0..n {
            consider(n + i, a + y[i]);
        }
        consider(2 * n, 1.0 - a);
        consider(2 * n + 1, a);
        let slack = 1.0 - a;
        for i in 0..n {
            let fi = y[i];
            let base = 2 * n + 2 + i * n;
            let drow = &lp.dist[i * n..(i + 1) * n];
            for j in 0..n {
                if j != i {
                    consider(base + j, drow[j] * slack - fi + y[j]);
                }
            }
        }
        let Some((q, _)) = entering else {
            let value: f64 = cost_b.iter().zip(&xb).map(|(c, x)| c * x).sum();
            return Ok(value.clamp(0.0, 2.0));
        };

        lp.column(q, &mut scratch);
        alpha.iter_mut().for_each(|v| *v = 0.0);
        for &(row, v) in &scratch {
            for r in 0..m {
                alpha[r] += binv[r * m + row] * v;
            }
        }

        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            if alpha[r] > PIVOT_TOL {
                let ratio = xb[r].max(0.0) / alpha[r];
                match leave {
                    None => leave = Some((r, ratio)),
                    Some((lr, best)) => {
                        if ratio < best - 1e-12 || (ratio <= best + 1e-12 && basis[r] < basis[lr]) {
                            leave = Some((r, ratio));
                        }
                    }
                }
            }
        }
        let Some((r, step)) = leave else {
            return Err(MeasureError::Solver("unbounded dual".into()));
        };

        for k in 0..m {
            xb[k] -= step * alpha[k];
        }
        xb[r] = step;
        let piv = alpha[r];
        for v in &mut binv[r * m..(r + 1) * m] {
            *v /= piv;
        }
        let (head, tail) = binv.split_at_mut(r * m);
        let (prow, rest) = tail.split_at_mut(m);
        for (k, row) in head.chunks_mut(m).chain(rest.chunks_mut(m)).enumerate() {
            let k = if k < r { k } else { k + 1 };
            let f = alpha[k];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
        is_basic[basis[r]] = false;
        is_basic[q] = true;
        basis[r] = q;
        cost_b[r] = lp.column(q, &mut scratch);

        degenerate_run = if step <= 1e-12 { degenerate_run + 1 } else { 0 };
        if (iter + 1) % REINVERT_EVERY == 0 {
            reinvert(lp, &basis, &b, &mut binv, &mut xb)?;
        }
    }
    Err(MeasureError::Solver("iteration limit reached".into()))
}

fn reinvert(lp: &Lp, basis: &[usize], b: &[f64], binv: &mut [f64], xb: &mut [f64]) -> Result<(), MeasureError> {
    let m = basis.len();
    let mut bm = DMatrix::<f64>::zeros(m, m);
    let mut scratch = Vec::with_capacity(3);
    for (c, &id) in basis.iter().enumerate() {
        lp.column(id, &mut scratch);
        for &(r, v) in &scratch {
            bm[(r, c)] = v;
        }
    }
    let inv = bm
        .try_inverse()
        .ok_or_else(|| MeasureError::Solver("singular basis".into()))?;
    for r in 0..m {
        for k in 0..m {
            binv[r * m + k] = inv[(r, k)];
        }
        let v: f64 = (0..m).map(|k| inv[(r, k)] * b[k]).sum();
        xb[r] = if v.abs() < 1e-13 { 0.0 } else { v };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_diracs() {
        let v = bl_lp(&[0.0, 2.0], 1, &[1.0, -1.0]).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v = bl_lp(&[0.0, 0.5], 1, &[1.0, -1.0]).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_mass_is_zero() {
        assert_eq!(bl_lp(&[0.0, 1.0], 1, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn spread_mass() {
        // ½δ₀ + ½δ₁ against δ_{0.5}: f(0) = f(1) = a, f(½) = a − (1−a)/2.
        let v = bl_lp(&[0.0, 0.5, 1.0], 1, &[0.5, -1.0, 0.5]).unwrap();
        // maximize a − (a − (1−a)/2) subject to |f(½)| ≤ a: value (1−a)/2 with
        // (1−a)/2 ≤ 2a, so a = 1/5 and the value is 2/5.
        assert!((v - 0.4).abs() < 1e-12, "{v}");
    }
}
