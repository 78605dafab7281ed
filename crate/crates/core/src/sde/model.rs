use serde::{Deserialize, Serialize};

use super::expr::Expression;
use super::SdeError;
use crate::apfun::{QpFunction, QpMatrix};

/// `dX = (A(t)X + f(t)) dt + Σᵢ (Bᵢ(t)X + gᵢ(t)) dWᵢ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSdeModel {
    d: usize,
    m: usize,
    a: QpMatrix,
    f: QpMatrix,
    b: Vec<QpMatrix>,
    g: Vec<QpMatrix>,
}

impl LinearSdeModel {
    pub fn new(a: QpMatrix, f: QpMatrix, b: Vec<QpMatrix>, g: Vec<QpMatrix>) -> Result<Self, SdeError> {
        let d = a.rows();
        let m = b.len();
        let shape_err = |what: &str, got: (usize, usize), want: (usize, usize)| {
            SdeError::Shape(format!("{what} has shape {got:?}, expected {want:?}"))
        };
        if a.shape() != (d, d) {
            return Err(shape_err("A", a.shape(), (d, d)));
        }
        if d == 0 {
            return Err(SdeError::Shape("state dimension must be positive".into()));
        }
        if f.shape() != (d, 1) {
            return Err(shape_err("f", f.shape(), (d, 1)));
        }
        if g.len() != m {
            return Err(SdeError::Shape(format!("{} B matrices but {} g vectors", m, g.len())));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.shape() != (d, d) {
                return Err(shape_err(&format!("B{}", i + 1), bi.shape(), (d, d)));
            }
        }
        for (i, gi) in g.iter().enumerate() {
            if gi.shape() != (d, 1) {
                return Err(shape_err(&format!("g{}", i + 1), gi.shape(), (d, 1)));
            }
        }
        Ok(Self { d, m, a, f, b, g })
    }

    /// Scalar model `dX = (a X + f) dt + Σ (bᵢ X + gᵢ) dWᵢ`.
    pub fn scalar(a: QpFunction, f: QpFunction, b: Vec<QpFunction>, g: Vec<QpFunction>) -> Result<Self, SdeError> {
        let wrap = |q: QpFunction| QpMatrix::vector(vec![q]);
        Self::new(
            wrap(a),
            wrap(f),
            b.into_iter().map(wrap).collect(),
            g.into_iter().map(wrap).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    /// Whether the moment equations reduce to a scalar ODE.
    pub fn is_scalar(&self) -> bool {
        self.d == 1
    }

    pub fn a(&self) -> &QpMatrix {
        &self.a
    }

    pub fn f(&self) -> &QpMatrix {
        &self.f
    }

    pub fn b(&self) -> &[QpMatrix] {
        &self.b
    }

    pub fn g(&self) -> &[QpMatrix] {
        &self.g
    }

    pub fn has_additive_noise(&self) -> bool {
        self.b.iter().all(QpMatrix::is_zero)
    }

    /// All coefficients shifted by `tau`.
    pub fn shift(&self, tau: f64) -> Self {
        Self {
            d: self.d,
            m: self.m,
            a: self.a.shift(tau),
            f: self.f.shift(tau),
            b: self.b.iter().map(|x| x.shift(tau)).collect(),
            g: self.g.iter().map(|x| x.shift(tau)).collect(),
        }
    }

    /// Same coefficients with `f = g = 0`.
    pub fn homogeneous(&self) -> Self {
        Self {
            d: self.d,
            m: self.m,
            a: self.a.clone(),
            f: QpMatrix::zeros(self.d, 1),
            b: self.b.clone(),
            g: vec![QpMatrix::zeros(self.d, 1); self.m],
        }
    }

    /// Bound on `sup_t ‖A(t)‖` (Frobenius of entrywise sup bounds).
    pub fn a_norm_bound(&self) -> f64 {
        self.a.sup_norm_bound()
    }

    /// Largest coefficient frequency.
    pub fn max_frequency(&self) -> f64 {
        std::iter::once(&self.a)
            .chain(std::iter::once(&self.f))
            .chain(&self.b)
            .chain(&self.g)
            .map(QpMatrix::max_frequency)
            .fold(0.0, f64::max)
    }

    /// Largest entrywise closed-form bound on `sup_t |coefficient difference|`
    /// between this model and `other` (same shapes assumed).
    pub fn coefficient_distance_bound(&self, other: &Self) -> f64 {
        let pairs = std::iter::once((&self.a, &other.a))
            .chain(std::iter::once((&self.f, &other.f)))
            .chain(self.b.iter().zip(&other.b))
            .chain(self.g.iter().zip(&other.g));
        pairs
            .flat_map(|(x, y)| x.entries().iter().zip(y.entries()))
            .map(|(p, q)| p.sub(q).sup_bound())
            .fold(0.0, f64::max)
    }
}

/// `dX = f(t,X) dt + g(t,X) dW` with expression coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSdeModel {
    d: usize,
    m: usize,
    coefficients: Vec<(String, QpFunction)>,
    drift: Vec<Expression>,
    /// Row-major `d×m`.
    diffusion: Vec<Expression>,
    declared_lipschitz: f64,
    declared_growth: f64,
}

impl NonlinearSdeModel {
    pub fn new(
        d: usize,
        m: usize,
        coefficients: Vec<(String, QpFunction)>,
        drift: Vec<Expression>,
        diffusion: Vec<Expression>,
        declared_lipschitz: f64,
        declared_growth: f64,
    ) -> Result<Self, SdeError> {
        if d == 0 {
            return Err(SdeError::Shape("state dimension must be positive".into()));
        }
        if drift.len() != d {
            return Err(SdeError::Shape(format!("{} drift components for d = {d}", drift.len())));
        }
        if diffusion.len() != d * m {
            return Err(SdeError::Shape(format!(
                "{} diffusion entries for a {d}×{m} grid",
                diffusion.len()
            )));
        }
        if !(declared_lipschitz > 0.0 && declared_growth > 0.0) {
            return Err(SdeError::Invalid("declared L and K must be positive".into()));
        }
        Ok(Self {
            d,
            m,
            coefficients,
            drift,
            diffusion,
            declared_lipschitz,
            declared_growth,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.m
    }

    pub fn coefficients(&self) -> &[(String, QpFunction)] {
        &self.coefficients
    }

    pub fn drift(&self) -> &[Expression] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Expression] {
        &self.diffusion
    }

    pub fn declared_lipschitz(&self) -> f64 {
        self.declared_lipschitz
    }

    pub fn declared_growth(&self) -> f64 {
        self.declared_growth
    }

    pub fn coefficient_values(&self, t: f64) -> Vec<f64> {
        self.coefficients.iter().map(|(_, q)| q.eval(t)).collect()
    }

    /// Coefficient table shifted by `tau`; `t` itself is left alone, so
    /// expressions using `t` outside named coefficients do not shift.
    pub fn shift_coefficients(&self, tau: f64) -> Self {
        let mut s = self.clone();
        for (_, q) in &mut s.coefficients {
            *q = q.shift(tau);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdeModel {
    Linear(LinearSdeModel),
    Nonlinear(NonlinearSdeModel),
}

impl From<LinearSdeModel> for SdeModel {
    fn from(m: LinearSdeModel) -> Self {
        SdeModel::Linear(m)
    }
}

impl From<NonlinearSdeModel> for SdeModel {
    fn from(m: NonlinearSdeModel) -> Self {
        SdeModel::Nonlinear(m)
    }
}

impl SdeModel {
    pub fn dim(&self) -> usize {
        match self {
            SdeModel::Linear(l) => l.dim(),
            SdeModel::Nonlinear(n) => n.dim(),
        }
    }

    pub fn noise_dim(&self) -> usize {
        match self {
            SdeModel::Linear(l) => l.noise_dim(),
            SdeModel::Nonlinear(n) => n.noise_dim(),
        }
    }

    /// Number of time-only values [`SdeModel::drift_at`] and
    /// [`SdeModel::diffusion_at`] need per step.
    pub(crate) fn frozen_len(&self) -> usize {
        match self {
            SdeModel::Linear(l) => {
                let (d, m) = (l.d, l.m);
                d * d + d + m * (d * d + d)
            }
            SdeModel::Nonlinear(n) => n.coefficients.len(),
        }
    }

    /// Time-only data at `t`: the coefficient matrices for linear models,
    /// the named coefficient values for nonlinear ones.
    pub(crate) fn freeze(&self, t: f64, out: &mut [f64]) {
        match self {
            SdeModel::Linear(l) => {
                let (d, m) = (l.d, l.m);
                let mut o = 0;
                l.a.eval_into(t, &mut out[o..o + d * d]);
                o += d * d;
                l.f.eval_into(t, &mut out[o..o + d]);
                o += d;
                for i in 0..m {
                    l.b[i].eval_into(t, &mut out[o..o + d * d]);
                    o += d * d;
                    l.g[i].eval_into(t, &mut out[o..o + d]);
                    o += d;
                }
            }
            SdeModel::Nonlinear(n) => {
                for (v, (_, q)) in out.iter_mut().zip(&n.coefficients) {
                    *v = q.eval(t);
                }
            }
        }
    }

    pub(crate) fn drift_at(&self, t: f64, frozen: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            SdeModel::Linear(l) => {
                let d = l.d;
                let (a, f) = (&frozen[..d * d], &frozen[d * d..d * d + d]);
                for i in 0..d {
                    let mut s = f[i];
                    for j in 0..d {
                        s += a[i * d + j] * x[j];
                    }
                    out[i] = s;
                }
            }
            SdeModel::Nonlinear(n) => {
                for (o, e) in out.iter_mut().zip(&n.drift) {
                    *o = e.eval(t, x, frozen);
                }
            }
        }
    }

    /// Row-major `d×m` diffusion matrix.
    pub(crate) fn diffusion_at(&self, t: f64, frozen: &[f64], x: &[f64], out: &mut [f64]) {
        match self {
            SdeModel::Linear(l) => {
                let (d, m) = (l.d, l.m);
                let base = d * d + d;
                for k in 0..m {
                    let off = base + k * (d * d + d);
                    let (b, g) = (&frozen[off..off + d * d], &frozen[off + d * d..off + d * d + d]);
                    for i in 0..d {
                        let mut s = g[i];
                        for j in 0..d {
                            s += b[i * d + j] * x[j];
                        }
                        out[i * m + k] = s;
                    }
                }
            }
            SdeModel::Nonlinear(n) => {
                for (o, e) in out.iter_mut().zip(&n.diffusion) {
                    *o = e.eval(t, x, frozen);
                }
            }
        }
    }

    /// Drift and diffusion at `(t, x)` without a precomputed frozen state.
    pub fn coefficients_at(&self, t: f64, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut frozen = vec![0.0; self.frozen_len()];
        self.freeze(t, &mut frozen);
        let (d, m) = (self.dim(), self.noise_dim());
        let mut f = vec![0.0; d];
        let mut g = vec![0.0; d * m];
        self.drift_at(t, &frozen, x, &mut f);
        self.diffusion_at(t, &frozen, x, &mut g);
        (f, g)
    }
}

/// Grid estimates of the regularity constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub lipschitz_estimate: f64,
    pub growth_estimate: f64,
    pub declared_lipschitz: Option<f64>,
    pub declared_growth: Option<f64>,
    /// Estimated L above the declared one by more than 1%.
    pub lipschitz_violation: bool,
    pub growth_violation: bool,
    pub t_grid: (f64, f64, f64),
    pub x_radius: f64,
    pub x_step: f64,
}

/// Time window scanned by [`estimate_regularity`].
pub const REGULARITY_T_GRID: (f64, f64, f64) = (0.0, 20.0 * std::f64::consts::PI, 0.05);
/// Cap on the number of x-grid points.
const MAX_X_POINTS: usize = 4096;

/// Lower estimates of the Lipschitz constant (largest finite-difference
/// slope between axis-neighbouring grid points) and of the growth constant
/// (largest `max(|f|, |g|)/(1 + |x|)`) of drift and diffusion together.
pub fn estimate_regularity(model: &SdeModel, domain_radius: f64, grid_step: f64) -> RegularityReport {
    let d = model.dim();
    let m = model.noise_dim();
    let per_axis_max = (MAX_X_POINTS as f64).powf(1.0 / d as f64).floor().max(2.0) as usize;
    let per_axis = (((2.0 * domain_radius / grid_step).round() as usize) + 1).clamp(2, per_axis_max);
    let h = 2.0 * domain_radius / (per_axis - 1) as f64;
    let axis: Vec<f64> = (0..per_axis).map(|k| -domain_radius + k as f64 * h).collect();
    let total = per_axis.pow(d as u32);
    let point = |mut idx: usize, x: &mut [f64]| {
        for xi in x.iter_mut() {
            *xi = axis[idx % per_axis];
            idx /= per_axis;
        }
    };

    let (t0, t1, dt) = REGULARITY_T_GRID;
    let nt = ((t1 - t0) / dt).round() as usize + 1;
    let mut frozen = vec![0.0; model.frozen_len()];
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let (mut fx, mut gx) = (vec![0.0; d], vec![0.0; d * m]);
    let (mut fy, mut gy) = (vec![0.0; d], vec![0.0; d * m]);
    let (mut lip, mut growth) = (0.0f64, 0.0f64);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for it in 0..nt {
        let t = t0 + it as f64 * dt;
        model.freeze(t, &mut frozen);
        for idx in 0..total {
            point(idx, &mut x);
            model.drift_at(t, &frozen, &x, &mut fx);
            model.diffusion_at(t, &frozen, &x, &mut gx);
            growth = growth.max(norm(&fx).max(norm(&gx)) / (1.0 + norm(&x)));
            let mut stride = 1;
            for _ in 0..d {
                if (idx / stride) % per_axis + 1 < per_axis {
                    point(idx + stride, &mut y);
                    model.drift_at(t, &frozen, &y, &mut fy);
                    model.diffusion_at(t, &frozen, &y, &mut gy);
                    let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
                    let dg: Vec<f64> = gx.iter().zip(&gy).map(|(a, b)| a - b).collect();
                    lip = lip.max(norm(&df).max(norm(&dg)) / h);
                }
                stride *= per_axis;
            }
        }
    }
    let (dl, dk) = match model {
        SdeModel::Nonlinear(n) => (Some(n.declared_lipschitz), Some(n.declared_growth)),
        SdeModel::Linear(_) => (None, None),
    };
    RegularityReport {
        lipschitz_estimate: lip,
        growth_estimate: growth,
        declared_lipschitz: dl,
        declared_growth: dk,
        lipschitz_violation: dl.is_some_and(|l| lip > 1.01 * l),
        growth_violation: dk.is_some_and(|k| growth > 1.01 * k),
        t_grid: REGULARITY_T_GRID,
        x_radius: domain_radius,
        x_step: h,
    }
}
