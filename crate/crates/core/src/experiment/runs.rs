use std::f64::consts::{FRAC_PI_2, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::models;
use super::params::{
    AmerioParams, BohrNeugebauerParams, ConvolutionParams, FavardParams, LyapunovParams, ParallelogramParams,
    ShiftLimitParams,
};
use super::{flow_step, linear_model, resolve, thin, Builder, ExperimentError, ExperimentOutput, ExperimentSpec, Predicate};
use crate::aptest::{
    ap_distribution_test_with, asymptotic_convergence_test, ApDistributionReport, ApTestOptions, ApVerdict,
};
use crate::measures::{
    bl_distance, bl_distance_with, BlOptions, EmpiricalMeasure, GaussianLaw, Law, LawDistanceOptions, MeasurePath,
};
use crate::momentflow::{
    bounded_flow, parallelogram_residual, propagate_moments, step_limit, MomentError, MomentFlow, CERTIFICATE_TOL,
};
use crate::report::{fmt_num, CsvTable};
use crate::sde::{simulate_ensemble_with, simulate_from_states, LinearSdeModel, SdeModel, SimOptions};
use crate::separation::{
    amerio_separation_estimate, check_h_conditions, corollary_linear_check, corollary_monotone_check, favard_check,
    linear_corollary_h_check, CorollaryConstant, FavardOutcome, HGrid, HalfLine, QuadraticArctan,
    FAVARD_STABLE_GROWTH, FAVARD_UNBOUNDED_GROWTH, SEPARATION_THRESHOLD,
};

const SALT_SHIFTS: u64 = 0x9E37_79B9_7F4A_7C15;
const SALT_X0: u64 = 0xBF58_476D_1CE4_E5B9;
const SALT_Y: u64 = 0x94D0_49BB_1331_11EB;

fn outer(m: &[f64]) -> Vec<f64> {
    m.iter().flat_map(|a| m.iter().map(move |b| a * b)).collect()
}

fn dirac_flow(model: &LinearSdeModel, x: &[f64], t1: f64, dt: f64) -> Result<MomentFlow, ExperimentError> {
    Ok(propagate_moments(model, x, &outer(x), 0.0, t1, dt)?)
}

/// `n` draws from `law`, row-major.
fn gaussian_samples(law: &GaussianLaw, n: usize, seed: u64) -> Result<Vec<f64>, ExperimentError> {
    let d = law.dim();
    let l = law.factor()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for a in 0..d {
            out.push(law.mean()[a] + (0..d).map(|b| l[a * d + b] * z[b]).sum::<f64>());
        }
    }
    Ok(out)
}

fn record_every(horizon: f64, checkpoints: usize, dt: f64) -> Result<usize, ExperimentError> {
    let every = horizon / checkpoints as f64 / dt;
    if (every - every.round()).abs() > 1e-6 || every.round() < 1.0 {
        return Err(ExperimentError::Config(format!(
            "horizon/checkpoints = {} is not a multiple of dt = {dt}",
            horizon / checkpoints as f64
        )));
    }
    Ok(every.round() as usize)
}

/// A bounded flow, or the reason the burn-in could not certify one.
fn certified_flow(
    model: &LinearSdeModel,
    burn_in: f64,
    window: (f64, f64),
    dt: f64,
) -> Result<Result<MomentFlow, String>, ExperimentError> {
    match bounded_flow(model, burn_in, window, dt) {
        Ok(f) => Ok(Ok(f)),
        Err(e @ (MomentError::NoBoundedFlow { .. } | MomentError::NotConverged { .. })) => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct ApSummary {
    verdict: ApVerdict,
    detected_periods: Vec<f64>,
    max_gap: f64,
    relatively_dense_within_scan: bool,
    t_window: (f64, f64),
    t_points: usize,
    upper_bound: bool,
}

impl From<&ApDistributionReport> for ApSummary {
    fn from(r: &ApDistributionReport) -> Self {
        Self {
            verdict: r.verdict,
            detected_periods: r.detected_periods.clone(),
            max_gap: r.max_gap,
            relatively_dense_within_scan: r.relatively_dense_within_scan,
            t_window: r.t_window,
            t_points: r.t_points,
            upper_bound: r.upper_bound,
        }
    }
}

fn ap_evidence(r: &ApDistributionReport) -> Predicate {
    Predicate::holds(
        "ap_evidence",
        r.verdict == ApVerdict::APEvidence,
        format!("{} shifts detected, largest gap {}", r.detected_periods.len(), fmt_num(r.max_gap)),
    )
}

pub(super) fn bohr_neugebauer(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: BohrNeugebauerParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = linear_model(spec, models::two_tone, "dX = (-X + cos t + cos sqrt2 t) dt + (1 + sin t / 2) dW")?;
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    b.tolerance("epsilon", p.epsilon);
    b.tolerance("max_gap", p.max_gap);
    b.tolerance("rate_tol", p.rate_tol);
    b.tolerance("final_rho_tol", p.final_rho_tol);
    b.tolerance("certificate_tol", CERTIFICATE_TOL);
    let (dt, every) = flow_step(&model, p.path_step);
    let end = (p.base_window.1 + p.scan.1).max(p.horizon);
    let flow = match certified_flow(&model, p.burn_in, (0.0, end), dt)? {
        Ok(f) => f,
        Err(reason) => {
            b.check(Predicate::holds("bounded_flow_certified", false, reason.clone()));
            return Ok(b.finish(&json!({ "bounded_flow": reason })));
        }
    };
    let certificate = flow.certificate().unwrap_or(f64::NAN);
    b.check(Predicate::below("bounded_flow_certified", certificate, CERTIFICATE_TOL));
    b.file("bounded_flow.csv", flow.csv_table().to_bytes());

    let path = thin(&flow.law_path()?, every)?;
    let opts = ApTestOptions {
        t_window: Some(p.base_window),
        ..ApTestOptions::default()
    };
    let ap = ap_distribution_test_with(&path, p.epsilon, p.scan, p.tau_step, &opts)?;
    b.check(ap_evidence(&ap));
    b.check(Predicate::at_most("max_gap", ap.max_gap, p.max_gap));
    b.file("ap_profile.csv", ap.profile_csv().to_bytes());

    let bounded = flow.restrict(0.0, p.horizon);
    let bounded_path = thin(&bounded.law_path()?, every)?;
    let c0 = bounded.covariance(0);
    let mut convergence = Vec::new();
    for (i, &m0) in p.initial_means.iter().enumerate() {
        let s0: Vec<f64> = c0.iter().zip(outer(&[m0])).map(|(c, m)| c + m).collect();
        let other = propagate_moments(&model, &[m0], &s0, 0.0, p.horizon, dt)?;
        let other_path = thin(&other.law_path()?, every)?;
        let rep = asymptotic_convergence_test(&other_path, &bounded_path, (p.horizon, p.horizon))?;
        let rate = rep.fitted_rate.unwrap_or(f64::NAN);
        b.check(Predicate::within(format!("rate_from_mean_{m0}"), rate, p.rate_target, p.rate_tol));
        b.check(Predicate::below(
            format!("rho_at_horizon_from_mean_{m0}"),
            rep.tail_max,
            p.final_rho_tol,
        ));
        b.file(format!("convergence_{i}.csv"), rep.profile_csv().to_bytes());
        convergence.push(json!({
            "initial_mean": m0,
            "fitted_rate": rep.fitted_rate,
            "rho_at_horizon": rep.tail_max,
            "upper_bound": rep.upper_bound,
        }));
    }
    Ok(b.finish(&json!({
        "flow_step": dt,
        "certificate": certificate,
        "ap_test": ApSummary::from(&ap),
        "convergence": convergence,
    })))
}

pub(super) fn convolution(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: ConvolutionParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = linear_model(spec, models::rotation_block, "damped coordinate plus rotation block forced at sqrt2")?;
    let d = model.dim();
    if p.y_std.len() != d {
        return Err(ExperimentError::Config(format!("y_std has {} entries, model dimension {d}", p.y_std.len())));
    }
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    b.tolerance("bl_tol", p.bl_tol);
    b.tolerance("epsilon", p.epsilon);
    b.tolerance("certificate_tol", CERTIFICATE_TOL);
    let every = record_every(p.horizon, p.checkpoints, p.dt)?;
    let (fdt, thin_every) = flow_step(&model, p.path_step);
    let end = (p.base_window.1 + p.scan.1).max(p.horizon);
    let flow = match certified_flow(&model, p.burn_in, (0.0, end), fdt)? {
        Ok(f) => f,
        Err(reason) => {
            b.check(Predicate::holds("bounded_flow_certified", false, reason.clone()));
            return Ok(b.finish(&json!({ "bounded_flow": reason })));
        }
    };
    let certificate = flow.certificate().unwrap_or(f64::NAN);
    b.check(Predicate::below("bounded_flow_certified", certificate, CERTIFICATE_TOL));

    // Law of X(t) + Y(t): X the bounded solution, Y the homogeneous solution
    // from N(0, diag(y_std²)), independent of X.
    let hom = model.homogeneous();
    let y_cov: Vec<f64> = (0..d * d)
        .map(|k| if k / d == k % d { p.y_std[k / d].powi(2) } else { 0.0 })
        .collect();
    let y_flow = propagate_moments(&hom, &vec![0.0; d], &y_cov, 0.0, end, fdt)?;
    if y_flow.len() != flow.len() {
        return Err(ExperimentError::Numerical("moment grids of X and Y differ".into()));
    }
    let summed: Vec<Law> = (0..flow.len())
        .step_by(thin_every)
        .map(|k| {
            let cov: Vec<f64> = flow.covariance(k).iter().zip(y_flow.covariance(k)).map(|(a, c)| a + c).collect();
            Ok(Law::Gaussian(GaussianLaw::new(flow.mean(k).to_vec(), cov)?))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let times: Vec<f64> = (0..flow.len()).step_by(thin_every).map(|k| flow.times()[k]).collect();
    let summed_path = MeasurePath::new(times, summed)?;
    let opts = ApTestOptions {
        t_window: Some(p.base_window),
        ..ApTestOptions::default()
    };
    let ap = ap_distribution_test_with(&summed_path, p.epsilon, p.scan, p.path_step, &opts)?;
    b.check(ap_evidence(&ap));
    b.file("ap_profile.csv", ap.profile_csv().to_bytes());

    // Ensembles: X from X₀, Y from Y₀, and X₀ + Y₀ directly. All share the
    // seed, so the three are driven by the same Brownian increments.
    let n = p.n_paths;
    let x0 = gaussian_samples(&flow.gaussian(0)?, n, spec.seed ^ SALT_X0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SALT_Y);
    let y0: Vec<f64> = (0..n * d)
        .map(|k| p.y_std[k % d] * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let sum0: Vec<f64> = x0.iter().zip(&y0).map(|(a, c)| a + c).collect();
    let sim = SimOptions { record_every: every };
    let full = SdeModel::Linear(model.clone());
    let ens_x = simulate_from_states(&full, &x0, 0.0, p.horizon, p.dt, spec.seed, &sim)?;
    let ens_sum = simulate_from_states(&full, &sum0, 0.0, p.horizon, p.dt, spec.seed, &sim)?;
    let deterministic_y = model.b().iter().all(|m| m.entries().iter().all(|q| q.sup_bound() == 0.0));
    let ens_y = if deterministic_y {
        None
    } else {
        Some(simulate_from_states(&SdeModel::Linear(hom.clone()), &y0, 0.0, p.horizon, p.dt, spec.seed, &sim)?)
    };

    let mut table = CsvTable::new(["t", "bl"]);
    let mut rows = Vec::new();
    let mut subsampled = false;
    for k in 1..ens_x.times().len() {
        let t = ens_x.times()[k];
        let y_t: Vec<f64> = match &ens_y {
            Some(e) => e.snapshot(k).to_vec(),
            None => {
                // Y(t) = Φ(t)Y₀ with Φ the fundamental matrix, column by column.
                let columns: Vec<Vec<f64>> = (0..d)
                    .map(|j| {
                        let mut e = vec![0.0; d];
                        e[j] = 1.0;
                        let f = dirac_flow(&hom, &e, t, step_limit(&hom).min(fdt))?;
                        Ok(f.mean(f.len() - 1).to_vec())
                    })
                    .collect::<Result<_, ExperimentError>>()?;
                (0..n * d)
                    .map(|k| (0..d).map(|j| columns[j][k % d] * y0[(k / d) * d + j]).sum())
                    .collect()
            }
        };
        let conv: Vec<f64> = ens_x.snapshot(k).iter().zip(&y_t).map(|(a, c)| a + c).collect();
        let conv = EmpiricalMeasure::uniform(d, conv)?;
        let r = bl_distance_with(
            &conv,
            &ens_sum.law_at(k),
            &BlOptions {
                seed: spec.seed,
                ..BlOptions::default()
            },
        )?;
        subsampled |= r.subsampled;
        table.push_numbers([t, r.value]);
        rows.push((t, r.value));
    }
    let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    b.check(
        Predicate::below("max_bl_direct_vs_convolution", worst, p.bl_tol)
            .with_detail(format!("{} checkpoints, subsampled: {subsampled}", rows.len())),
    );
    b.file("bl_checkpoints.csv", table.to_bytes());
    Ok(b.finish(&json!({
        "flow_step": fdt,
        "certificate": certificate,
        "ap_test": ApSummary::from(&ap),
        "bl_checkpoints": rows,
        "bl_subsampled": subsampled,
        "y_deterministic": deterministic_y,
    })))
}

pub(super) fn shift_limit(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: ShiftLimitParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = linear_model(spec, models::two_tone, "dX = (-X + cos t + cos sqrt2 t) dt + (1 + sin t / 2) dW")?;
    if model.dim() != 1 {
        return Err(ExperimentError::Config("shift-limit needs a scalar model".into()));
    }
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    b.tolerance("final_rho_tol", p.final_rho_tol);

    // Shifts α = 2πk with coefficient distance below 1/n and below the
    // previous level's.
    let mut shifts: Vec<(usize, f64, f64)> = Vec::new();
    let mut k = 0usize;
    let mut prev = f64::INFINITY;
    for level in 1..=p.levels {
        let target = (1.0 / level as f64).min(prev);
        let found = loop {
            k += 1;
            if k > p.max_multiple {
                break None;
            }
            let alpha = TAU * k as f64;
            let dist = model.shift(alpha).coefficient_distance_bound(&model);
            if dist < target {
                break Some((alpha, dist));
            }
        };
        match found {
            Some((alpha, dist)) => {
                b.check(Predicate::below(format!("coefficient_distance_{level}"), dist, 1.0 / level as f64));
                shifts.push((level, alpha, dist));
                prev = dist;
            }
            None => {
                b.check(Predicate::holds(
                    format!("coefficient_distance_{level}"),
                    false,
                    format!("no multiple of 2π up to {} brings the distance below {}", p.max_multiple, fmt_num(target)),
                ));
                break;
            }
        }
    }

    let every = record_every(p.horizon, (p.horizon / p.sample_step).round() as usize, p.dt)?;
    let sim = SimOptions { record_every: every };
    let start = EmpiricalMeasure::dirac(&[p.x0]);
    let base = simulate_ensemble_with(&SdeModel::Linear(model.clone()), &start, 0.0, p.horizon, p.dt, p.n_paths, spec.seed, &sim)?;
    let times = base.times().to_vec();
    let mut profiles: Vec<Vec<f64>> = Vec::new();
    let mut sups = Vec::new();
    for &(_, alpha, _) in &shifts {
        let shifted = SdeModel::Linear(model.shift(alpha));
        let ens = simulate_ensemble_with(&shifted, &start, 0.0, p.horizon, p.dt, p.n_paths, spec.seed, &sim)?;
        let rho: Vec<f64> = (0..times.len())
            .into_par_iter()
            .map(|k| bl_distance(&ens.law_at(k), &base.law_at(k)))
            .collect::<Result<_, _>>()?;
        sups.push(rho.iter().copied().fold(0.0, f64::max));
        profiles.push(rho);
    }
    let decreasing = sups.windows(2).all(|w| w[1] < w[0]);
    b.check(Predicate::holds(
        "sup_rho_strictly_decreasing",
        decreasing && sups.len() == p.levels,
        sups.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(" > "),
    ));
    b.check(Predicate::below("final_sup_rho", sups.last().copied().unwrap_or(f64::NAN), p.final_rho_tol));

    let mut table = CsvTable::new(["level", "alpha", "coefficient_distance", "sup_rho"]);
    for (s, sup) in shifts.iter().zip(&sups) {
        table.push_numbers([s.0 as f64, s.1, s.2, *sup]);
    }
    b.file("levels.csv", table.to_bytes());
    let mut header = vec!["t".to_string()];
    header.extend(shifts.iter().map(|s| format!("rho_{}", s.0)));
    let mut prof = CsvTable::new(header);
    for (k, &t) in times.iter().enumerate() {
        prof.push_numbers(std::iter::once(t).chain(profiles.iter().map(|r| r[k])));
    }
    b.file("rho_profiles.csv", prof.to_bytes());
    let levels: Vec<_> = shifts
        .iter()
        .zip(&sups)
        .map(|(s, sup)| json!({ "level": s.0, "alpha": s.1, "coefficient_distance": s.2, "sup_rho": sup }))
        .collect();
    Ok(b.finish(&json!({ "levels": levels })))
}

/// Moment flows from `x1`, `x2`, their midpoint (full model) and their
/// half-difference (homogeneous model).
fn parallelogram_flows(
    model: &LinearSdeModel,
    x1: &[f64],
    x2: &[f64],
    horizon: f64,
) -> Result<[MomentFlow; 4], ExperimentError> {
    if x1.len() != model.dim() || x2.len() != model.dim() {
        return Err(ExperimentError::Config(format!(
            "initial states must have {} entries",
            model.dim()
        )));
    }
    let hom = model.homogeneous();
    let dt = step_limit(model).min(step_limit(&hom)).min(0.01);
    let mid: Vec<f64> = x1.iter().zip(x2).map(|(a, c)| 0.5 * (a + c)).collect();
    let hd: Vec<f64> = x1.iter().zip(x2).map(|(a, c)| 0.5 * (a - c)).collect();
    Ok([
        dirac_flow(model, x1, horizon, dt)?,
        dirac_flow(model, x2, horizon, dt)?,
        dirac_flow(model, &mid, horizon, dt)?,
        dirac_flow(&hom, &hd, horizon, dt)?,
    ])
}

pub(super) fn parallelogram(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: ParallelogramParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = linear_model(spec, models::forced_ou, "dX = (-X + cos t) dt + dW")?;
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    b.tolerance("residual_tol", p.residual_tol);
    b.tolerance("se_factor", p.se_factor);
    let (x1, x2) = if model.dim() == 1 {
        (vec![p.x1], vec![p.x2])
    } else {
        (p.block_x1.clone(), p.block_x2.clone())
    };

    let [f1, f2, fm, fh] = parallelogram_flows(&model, &x1, &x2, p.horizon)?;
    let exact = parallelogram_residual(&f1, &f2, &fm, &fh)?;
    b.check(Predicate::below("exact_residual", exact, p.residual_tol));
    let mut table = CsvTable::new(["t", "trace_1", "trace_2", "trace_mid", "trace_halfdiff", "residual"]);
    for k in 0..f1.len() {
        let r = fm.trace(k) + fh.trace(k) - 0.5 * (f1.trace(k) + f2.trace(k));
        table.push_numbers([f1.times()[k], f1.trace(k), f2.trace(k), fm.trace(k), fh.trace(k), r]);
    }
    b.file("exact.csv", table.to_bytes());
    let block = models::rotation_block();
    let [g1, g2, gm, gh] = parallelogram_flows(&block, &p.block_x1, &p.block_x2, p.horizon)?;
    let block_exact = parallelogram_residual(&g1, &g2, &gm, &gh)?;
    b.check(Predicate::below("exact_residual_block", block_exact, p.residual_tol));

    // Ensemble version with common noise: the identity holds pathwise, so the
    // per-path residual has mean zero.
    let every = record_every(p.horizon, p.checkpoints, p.dt)?;
    let sim = SimOptions { record_every: every };
    let n = p.n_paths;
    let d = model.dim();
    let mid: Vec<f64> = x1.iter().zip(&x2).map(|(a, c)| 0.5 * (a + c)).collect();
    let hd: Vec<f64> = x1.iter().zip(&x2).map(|(a, c)| 0.5 * (a - c)).collect();
    let run = |m: &LinearSdeModel, x: &[f64]| {
        let starts: Vec<f64> = (0..n).flat_map(|_| x.iter().copied()).collect();
        simulate_from_states(&SdeModel::Linear(m.clone()), &starts, 0.0, p.horizon, p.dt, spec.seed, &sim)
    };
    let hom = model.homogeneous();
    let (e1, e2, em, eh) = (run(&model, &x1)?, run(&model, &x2)?, run(&model, &mid)?, run(&hom, &hd)?);
    let sq = |s: &[f64], i: usize| s[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>();
    let mut ens_table = CsvTable::new(["t", "mean_residual", "standard_error"]);
    let mut excess = f64::NEG_INFINITY;
    let mut rows = Vec::new();
    for k in 1..e1.times().len() {
        let (s1, s2, sm, sh) = (e1.snapshot(k), e2.snapshot(k), em.snapshot(k), eh.snapshot(k));
        let r: Vec<f64> = (0..n).map(|i| sq(sm, i) + sq(sh, i) - 0.5 * (sq(s1, i) + sq(s2, i))).collect();
        let mean = r.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let se = (var / n as f64).sqrt();
        excess = excess.max(mean.abs() - p.se_factor * se);
        ens_table.push_numbers([e1.times()[k], mean, se]);
        rows.push((e1.times()[k], mean, se));
    }
    b.check(
        Predicate::at_most("ensemble_residual_excess", excess, 1e-9)
            .with_detail("max over checkpoints of |mean residual| - se_factor * standard error"),
    );
    b.file("ensemble.csv", ens_table.to_bytes());
    Ok(b.finish(&json!({
        "exact_residual": exact,
        "exact_residual_block": block_exact,
        "ensemble": rows,
    })))
}

pub(super) fn favard(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: FavardParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = linear_model(spec, models::ornstein_uhlenbeck, "dX = -X dt + dW")?;
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    b.tolerance("mean_tol", p.tol);
    b.tolerance("stable_growth", FAVARD_STABLE_GROWTH);
    b.tolerance("unbounded_growth", FAVARD_UNBOUNDED_GROWTH);
    let base = favard_check(&model, p.scan_t, p.tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ SALT_SHIFTS);
    let taus: Vec<f64> = (0..p.shifts).map(|_| rng.gen_range(-p.shift_range..=p.shift_range)).collect();
    let shifted: Vec<_> = taus
        .iter()
        .map(|&tau| favard_check(&model.shift(tau), p.scan_t, p.tol))
        .collect::<Result<_, _>>()?;
    b.check(Predicate::holds(
        "verdict_not_fails",
        matches!(base.verdict, FavardOutcome::VacuouslyHolds | FavardOutcome::Holds),
        format!("{:?}", base.verdict),
    ));
    let agree = shifted.iter().filter(|v| v.verdict == base.verdict).count();
    b.check(Predicate::holds(
        "shift_invariant",
        agree == shifted.len(),
        format!("{agree} of {} shifted verdicts agree", shifted.len()),
    ));
    let mut table = CsvTable::new(["tau", "verdict", "mean_q", "primitive_inf", "primitive_sup"]);
    for (tau, v) in taus.iter().zip(&shifted) {
        table.push(vec![
            fmt_num(*tau),
            format!("{:?}", v.verdict),
            fmt_num(v.mean_q),
            fmt_num(v.primitive_inf),
            fmt_num(v.primitive_sup),
        ]);
    }
    b.file("shifts.csv", table.to_bytes());
    let shifts: Vec<_> = taus
        .iter()
        .zip(&shifted)
        .map(|(tau, v)| json!({ "tau": tau, "verdict": v.verdict }))
        .collect();
    Ok(b.finish(&json!({ "verdict": base, "shifts": shifts })))
}

pub(super) fn lyapunov(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: LyapunovParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = match &spec.model {
        Some(m) => (m.clone(), "configuration file".to_string()),
        None => (
            SdeModel::Linear(models::expansive_multiplicative()),
            "built-in: dX = (1 + 0.3 cos t) X dt + X dW".to_string(),
        ),
    };
    if model.dim() != 1 {
        return Err(ExperimentError::Config(format!(
            "lyapunov needs a scalar model, got dimension {}",
            model.dim()
        )));
    }
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    let grid = HGrid {
        t: p.h_t_grid,
        x: p.h_x_grid,
    };
    let mut results = serde_json::Map::new();
    let report = match &model {
        SdeModel::Linear(l) => {
            let cor = corollary_linear_check(l, &p.t_grid)?;
            b.check(
                Predicate::above("corollary_constant", cor.c_est, 0.0)
                    .with_detail(format!("min of 2A + sum B^2 at t = {}", fmt_num(cor.argmin_t))),
            );
            results.insert("corollary".into(), json!(cor));
            results.insert("witness".into(), json!({ "t": cor.argmin_t, "q": cor.c_est }));
            if cor.pass {
                Some(linear_corollary_h_check(l, cor.c_est, &grid)?)
            } else {
                None
            }
        }
        SdeModel::Nonlinear(n) => {
            b.tolerance("l0", p.l0);
            let cor = corollary_monotone_check(&n.drift()[0], n.coefficients(), p.l0, &p.t_grid, &p.x_grid)?;
            b.check(Predicate::holds(
                "corollary_monotone",
                cor.pass,
                format!(
                    "min slope {} at t = {}, x in [{}, {}]",
                    fmt_num(cor.min_ratio),
                    fmt_num(cor.witness.t),
                    fmt_num(cor.witness.y[0]),
                    fmt_num(cor.witness.x[0])
                ),
            ));
            results.insert("corollary".into(), json!(cor));
            if cor.pass {
                let scale = 2.0 * p.l0 * (-FRAC_PI_2).exp();
                let gap = move |r: f64| scale * r * r;
                let mut rep = check_h_conditions(&QuadraticArctan, &gap, FRAC_PI_2.exp(), 0.0, &model, &grid)?;
                rep.corollary = Some(CorollaryConstant::Monotone { l0: p.l0 });
                Some(rep)
            } else {
                None
            }
        }
    };
    if let Some(rep) = report {
        b.check(Predicate::holds(
            "h_conditions",
            rep.pass,
            format!(
                "min margin {} at t = {}",
                fmt_num(rep.h0_min_margin),
                fmt_num(rep.h0_witness.t)
            ),
        ));
        results.insert("h_check".into(), json!(rep));
    }
    Ok(b.finish(&serde_json::Value::Object(results)))
}

pub(super) fn amerio(spec: &ExperimentSpec) -> Result<ExperimentOutput, ExperimentError> {
    let p: AmerioParams = resolve(&spec.params)?;
    p.validate()?;
    let (model, label) = linear_model(spec, models::forced_ou, "dX = (-X + cos t) dt + dW")?;
    let mut b = Builder::new(spec.name, spec.seed, label, &p);
    b.tolerance("separation_threshold", SEPARATION_THRESHOLD);
    let d = model.dim();
    let (dt, every) = flow_step(&model, p.path_step);
    let labels: Vec<String> = p.initial_means.iter().map(|m| format!("mean_{m}")).collect();
    let paths: Vec<MeasurePath> = p
        .initial_means
        .iter()
        .map(|&m| thin(&dirac_flow(&model, &vec![m; d], p.horizon, dt)?.law_path()?, every))
        .collect::<Result<_, _>>()?;
    let matrix = amerio_separation_estimate(&labels, &paths, HalfLine::Positive, &LawDistanceOptions::default())?;
    let n = matrix.len();
    let pairs = n * (n - 1) / 2;
    let worst = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| matrix.get(i, j))
        .fold(0.0, f64::max);
    b.check(
        Predicate::below("max_pairwise_infimum", worst, SEPARATION_THRESHOLD)
            .with_detail(format!("{} of {pairs} pairs not separated", matrix.not_separated.len())),
    );
    b.file("separation.csv", matrix.csv_table().to_bytes());
    Ok(b.finish(&json!({ "separation": matrix })))
}
