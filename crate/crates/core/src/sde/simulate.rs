//! Euler–Maruyama ensembles with counter-addressed noise.
//!
//! Trajectory `k` reads its Gaussian increments from ChaCha8 stream `k` at a
//! word position fixed by the absolute step index `round(t/dt)`. Results do
//! not depend on the worker count, and two runs with the same seed and step
//! see the same Brownian increments on their common time span even when
//! they start at different times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::SdeModel;
use super::SdeError;
use crate::measures::{EmpiricalMeasure, Law, MeasurePath};

/// States beyond this magnitude abort the run.
pub const BLOWUP_THRESHOLD: f64 = 1e12;
/// Keeps absolute step indices of negative start times nonnegative.
const STEP_OFFSET: i128 = 1 << 40;
const INIT_STREAM_BIT: u64 = 1 << 63;

/// Standard normals in fixed positions: normal `j` of a stream uses words
/// `4⌊j/2⌋ .. 4⌊j/2⌋+4` (one Box–Muller pair).
struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    fn at(seed: u64, stream: u64, index: u128) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos((index / 2) * 4);
        let mut s = Self { rng, spare: None };
        if index % 2 == 1 {
            s.next();
        }
        s
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Keep every `record_every`-th state; the recorded grid step is
    /// `record_every·dt`.
    pub record_every: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { record_every: 1 }
    }
}

/// Recorded trajectories, stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    times: Vec<f64>,
    dim: usize,
    n_paths: usize,
    states: Vec<f64>,
    seed: u64,
    dt: f64,
    record_every: usize,
}

impl PathEnsemble {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Integration step.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Spacing of the recorded grid.
    pub fn grid_step(&self) -> f64 {
        self.dt * self.record_every as f64
    }

    /// All states at recorded time `k`, path-major `n_paths × dim`.
    pub fn snapshot(&self, k: usize) -> &[f64] {
        let w = self.n_paths * self.dim;
        &self.states[k * w..(k + 1) * w]
    }

    pub fn state(&self, k: usize, path: usize) -> &[f64] {
        let s = self.snapshot(k);
        &s[path * self.dim..(path + 1) * self.dim]
    }

    /// Empirical law at recorded time `k`.
    pub fn law_at(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.dim, self.snapshot(k).to_vec()).expect("finite states")
    }

    /// Sample mean and row-major second moment `E[XXᵀ]` at time `k`.
    pub fn moments_at(&self, k: usize) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let (mut m, mut s) = (vec![0.0; d], vec![0.0; d * d]);
        for x in self.snapshot(k).chunks(d) {
            for i in 0..d {
                m[i] += x[i];
                for j in 0..d {
                    s[i * d + j] += x[i] * x[j];
                }
            }
        }
        let n = self.n_paths as f64;
        m.iter_mut().for_each(|v| *v /= n);
        s.iter_mut().for_each(|v| *v /= n);
        (m, s)
    }

    /// Pathwise map of two ensembles on the same grid.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, SdeError> {
        if self.times != other.times || self.n_paths != other.n_paths || self.dim != other.dim {
            return Err(SdeError::Invalid("ensembles are not on a common grid".into()));
        }
        let mut out = self.clone();
        for (a, b) in out.states.iter_mut().zip(&other.states) {
            *a = f(*a, *b);
        }
        Ok(out)
    }
}

fn validate(t0: f64, t1: f64, dt: f64, n: usize) -> Result<usize, SdeError> {
    if !(t0.is_finite() && t1.is_finite() && t0 < t1) {
        return Err(SdeError::InvalidArgument("need finite t0 < t1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SdeError::InvalidArgument("dt must be positive".into()));
    }
    if n == 0 {
        return Err(SdeError::InvalidArgument("need at least one trajectory".into()));
    }
    Ok(((t1 - t0) / dt - 1e-9).ceil() as usize)
}

/// Simulates `n` trajectories on `[t0, t1]`; trajectory `k` starts from a
/// stratified draw of `initial` made under its own stream.
pub fn simulate_ensemble(
    model: &SdeModel,
    initial: &EmpiricalMeasure,
    t0: f64,
    t1: f64,
    dt: f64,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble, SdeError> {
    simulate_ensemble_with(model, initial, t0, t1, dt, n, seed, &SimOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble_with(
    model: &SdeModel,
    initial: &EmpiricalMeasure,
    t0: f64,
    t1: f64,
    dt: f64,
    n: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble, SdeError> {
    if initial.dim() != model.dim() {
        return Err(SdeError::Invalid(format!(
            "initial law has dimension {}, model {}",
            initial.dim(),
            model.dim()
        )));
    }
    validate(t0, t1, dt, n)?;
    let d = model.dim();
    let mut starts = vec![0.0; n * d];
    let weights = initial.weights();
    for k in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM_BIT | k as u64);
        let u = (k as f64 + rng.gen::<f64>()) / n as f64;
        let mut cum = 0.0;
        let mut idx = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            cum += w;
            if u < cum {
                idx = i;
                break;
            }
        }
        starts[k * d..(k + 1) * d].copy_from_slice(initial.point(idx));
    }
    simulate_from_states(model, &starts, t0, t1, dt, seed, opts)
}

/// Simulates one trajectory per row of `starts` (`n × d`, row-major).
pub fn simulate_from_states(
    model: &SdeModel,
    starts: &[f64],
    t0: f64,
    t1: f64,
    dt: f64,
    seed: u64,
    opts: &SimOptions,
) -> Result<PathEnsemble, SdeError> {
    let d = model.dim();
    let m = model.noise_dim();
    if d == 0 || starts.len() % d != 0 {
        return Err(SdeError::Invalid("start states do not match the model dimension".into()));
    }
    let n = starts.len() / d;
    let steps = validate(t0, t1, dt, n)?;
    let every = opts.record_every.max(1);
    let recorded: Vec<usize> = (0..=steps).filter(|i| i % every == 0).collect();
    let times: Vec<f64> = recorded.iter().map(|&i| t0 + i as f64 * dt).collect();
    let n_rec = times.len();

    let fl = model.frozen_len();
    let mut frozen = vec![0.0; steps * fl];
    for i in 0..steps {
        model.freeze(t0 + i as f64 * dt, &mut frozen[i * fl..(i + 1) * fl]);
    }
    let first_step = (t0 / dt).round() as i128 + STEP_OFFSET;
    if first_step < 0 {
        return Err(SdeError::InvalidArgument("start time too far in the past for dt".into()));
    }
    let sqdt = dt.sqrt();

    let run = |k: usize| -> Result<Vec<f64>, f64> {
        let mut out = Vec::with_capacity(n_rec * d);
        let mut x = starts[k * d..(k + 1) * d].to_vec();
        let mut drift = vec![0.0; d];
        let mut diff = vec![0.0; d * m];
        let mut xi = vec![0.0; m];
        let mut noise = NormalStream::at(seed, k as u64, first_step as u128 * m as u128);
        out.extend_from_slice(&x);
        for i in 0..steps {
            let t = t0 + i as f64 * dt;
            let fz = &frozen[i * fl..(i + 1) * fl];
            model.drift_at(t, fz, &x, &mut drift);
            model.diffusion_at(t, fz, &x, &mut diff);
            for z in xi.iter_mut() {
                *z = noise.next() * sqdt;
            }
            for a in 0..d {
                let mut dx = drift[a] * dt;
                for (l, z) in xi.iter().enumerate() {
                    dx += diff[a * m + l] * z;
                }
                x[a] += dx;
            }
            if x.iter().any(|v| !(v.abs() <= BLOWUP_THRESHOLD)) {
                return Err(t + dt);
            }
            if (i + 1) % every == 0 {
                out.extend_from_slice(&x);
            }
        }
        Ok(out)
    };

    let paths: Vec<Result<Vec<f64>, f64>> = (0..n).into_par_iter().map(run).collect();
    let mut first_blowup: Option<f64> = None;
    for p in &paths {
        if let Err(t) = p {
            first_blowup = Some(first_blowup.map_or(*t, |b: f64| b.min(*t)));
        }
    }
    if let Some(time) = first_blowup {
        return Err(SdeError::NumericalBlowup { time });
    }
    let mut states = vec![0.0; n_rec * n * d];
    for (k, p) in paths.into_iter().enumerate() {
        let p = p.expect("checked above");
        for r in 0..n_rec {
            let dst = (r * n + k) * d;
            states[dst..dst + d].copy_from_slice(&p[r * d..(r + 1) * d]);
        }
    }
    Ok(PathEnsemble {
        times,
        dim: d,
        n_paths: n,
        states,
        seed,
        dt,
        record_every: every,
    })
}

/// A sample time that was moved by more than half a grid step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapWarning {
    pub requested: f64,
    pub used: f64,
}

/// Empirical laws at the grid times nearest to `sample_times`.
pub fn law_path(ensemble: &PathEnsemble, sample_times: &[f64]) -> Result<(MeasurePath, Vec<SnapWarning>), SdeError> {
    if ensemble.n_paths == 0 || ensemble.times.is_empty() || sample_times.is_empty() {
        return Err(SdeError::EmptyEnsemble);
    }
    let h = ensemble.grid_step();
    let t0 = ensemble.times[0];
    let last = ensemble.times.len() - 1;
    let mut warnings = Vec::new();
    let mut times = Vec::with_capacity(sample_times.len());
    let mut laws = Vec::with_capacity(sample_times.len());
    for &s in sample_times {
        let k = (((s - t0) / h).round().max(0.0) as usize).min(last);
        let used = ensemble.times[k];
        if (used - s).abs() > 0.5 * h * (1.0 + 1e-9) {
            warnings.push(SnapWarning { requested: s, used });
        }
        times.push(used);
        laws.push(Law::Empirical(ensemble.law_at(k)));
    }
    let path = MeasurePath::new(times, laws).map_err(|e| SdeError::Invalid(e.to_string()))?;
    Ok((path, warnings))
}

/// Law path at every recorded time.
pub fn full_law_path(ensemble: &PathEnsemble) -> MeasurePath {
    let laws = (0..ensemble.times.len())
        .map(|k| Law::Empirical(ensemble.law_at(k)))
        .collect();
    MeasurePath::new(ensemble.times.clone(), laws).expect("recorded grid is increasing")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apfun::QpFunction;
    use crate::sde::LinearSdeModel;

    fn ou() -> SdeModel {
        LinearSdeModel::scalar(
            QpFunction::constant(-1.0),
            QpFunction::zero(),
            vec![QpFunction::zero()],
            vec![QpFunction::constant(1.0)],
        )
        .unwrap()
        .into()
    }

    #[test]
    fn normal_stream_is_position_addressed() {
        let mut a = NormalStream::at(5, 3, 10);
        let seq: Vec<f64> = (0..6).map(|_| a.next()).collect();
        let mut b = NormalStream::at(5, 3, 13);
        assert_eq!(b.next(), seq[3]);
        assert_eq!(b.next(), seq[4]);
        let mut c = NormalStream::at(5, 4, 10);
        assert_ne!(c.next(), seq[0]);
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let zero: SdeModel = LinearSdeModel::scalar(
            QpFunction::zero(),
            QpFunction::zero(),
            vec![QpFunction::zero()],
            vec![QpFunction::zero()],
        )
        .unwrap()
        .into();
        let init = EmpiricalMeasure::uniform(1, vec![-1.0, 2.0]).unwrap();
        let e = simulate_ensemble(&zero, &init, 0.0, 1.0, 0.1, 4, 1).unwrap();
        assert_eq!(e.times().len(), 11);
        for k in 0..e.times().len() {
            assert_eq!(e.snapshot(k), e.snapshot(0));
        }
        assert_eq!(e.snapshot(0), &[-1.0, -1.0, 2.0, 2.0]);
    }

    #[test]
    fn shared_noise_across_start_times() {
        let init = EmpiricalMeasure::dirac(&[0.0]);
        let a = simulate_ensemble(&ou(), &init, -1.0, 1.0, 0.01, 3, 9).unwrap();
        // Restart from a's state at t = 0 and compare at t = 1.
        let starts: Vec<f64> = (0..3).map(|k| a.state(100, k)[0]).collect();
        let b = simulate_from_states(&ou(), &starts, 0.0, 1.0, 0.01, 9, &SimOptions::default()).unwrap();
        for k in 0..3 {
            assert!((a.state(200, k)[0] - b.state(100, k)[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn worker_count_does_not_matter() {
        let init = EmpiricalMeasure::uniform(1, vec![0.0, 1.0, 3.0]).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_ensemble(&ou(), &init, 0.0, 2.0, 0.01, 50, 77).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn blowup_reported() {
        let boom: SdeModel = LinearSdeModel::scalar(
            QpFunction::constant(50.0),
            QpFunction::zero(),
            vec![],
            vec![],
        )
        .unwrap()
        .into();
        let r = simulate_ensemble(&boom, &EmpiricalMeasure::dirac(&[1.0]), 0.0, 10.0, 0.01, 2, 0);
        match r {
            Err(SdeError::NumericalBlowup { time }) => assert!(time > 0.0 && time < 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn law_path_snapping() {
        let e = simulate_ensemble(&ou(), &EmpiricalMeasure::dirac(&[3.0]), 0.0, 1.0, 0.1, 1, 0).unwrap();
        let (p, w) = law_path(&e, &[0.0, 0.52, 5.0]).unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.times()[1] - 0.5).abs() < 1e-12);
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].requested, 5.0);
        let Law::Empirical(m0) = &p.laws()[0] else { panic!() };
        assert_eq!(m0.points(), &[3.0]);
    }
}
