//! `apsde` command-line front end.
//!
//! Every subcommand writes a JSON summary and CSV artifacts into `--out`
//! (atomically), prints the summary on stdout and exits with 0 (pass),
//! 1 (a predicate failed), 2 (configuration or i/o error) or 3 (numerical
//! error). Errors are reported on stderr as `{"error": code, "message": ..}`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use apsde::aptest::{ap_distribution_test_with, ApTestOptions, ApVerdict};
use apsde::experiment::{
    parse_param, run, ExperimentError, ExperimentName, ExperimentSpec, EXIT_PASS, EXIT_PREDICATE_FAIL,
};
use apsde::measures::io::{read_empirical_path_csv, read_gaussian_path_csv, write_path_csv};
use apsde::measures::{EmpiricalMeasure, MeasurePath};
use apsde::momentflow::{bounded_flow, minimal_value, propagate_moments, step_limit, MomentFlow};
use apsde::report::{to_json_bytes, write_atomic, CsvTable};
use apsde::sde::{full_law_path, parse_model, simulate_ensemble_with, LinearSdeModel, SdeModel, SimOptions};
use apsde::separation::{favard_check, FavardOutcome};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "apsde", version, about = "Almost periodic solution laws of stochastic differential equations")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Model file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Euler–Maruyama ensemble from a fixed initial state.
    Simulate {
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 10.0)]
        t1: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Initial state, comma separated; zero by default.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        record_every: usize,
        /// Also write every recorded state.
        #[arg(long)]
        paths: bool,
    },
    /// Mean and second-moment flow of a linear model.
    MomentFlow {
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 10.0)]
        t1: f64,
        /// RK4 step; the model's step limit by default.
        #[arg(long)]
        dt: Option<f64>,
        /// Start from this state; without it the bounded flow is computed.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        x0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 40.0)]
        burn_in: f64,
    },
    /// Almost-periodicity test of a law path.
    ApTest {
        /// Law path CSV (Gaussian or empirical); the bounded flow of the
        /// model is used otherwise.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        scan_min: f64,
        #[arg(long, default_value_t = 50.0)]
        scan_max: f64,
        #[arg(long, default_value_t = 0.1)]
        tau_step: f64,
        /// Base-time window `a,b`.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        window: Option<Vec<f64>>,
        #[arg(long, default_value_t = 40.0)]
        burn_in: f64,
    },
    /// Favard condition for the homogeneous hull equations.
    FavardCheck {
        #[arg(long, default_value_t = 200.0)]
        scan_t: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Sufficient Lyapunov conditions for a unique bounded law.
    LyapunovCheck {
        #[arg(long, default_value_t = 1.0)]
        l0: f64,
    },
    /// Runs one of the built-in experiments.
    Experiment {
        /// bohr-neugebauer, convolution, shift-limit, parallelogram, favard,
        /// lyapunov or amerio.
        name: String,
        /// Parameter override `key=value`; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
}

fn config_error(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

fn load_model(config: &Option<PathBuf>) -> Result<Option<SdeModel>, ExperimentError> {
    let Some(path) = config else { return Ok(None) };
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(Some(parse_model(&text)?.model))
}

fn require_model(config: &Option<PathBuf>) -> Result<SdeModel, ExperimentError> {
    load_model(config)?.ok_or_else(|| config_error("this subcommand needs --config <model file>"))
}

fn require_linear(config: &Option<PathBuf>) -> Result<LinearSdeModel, ExperimentError> {
    match require_model(config)? {
        SdeModel::Linear(l) => Ok(l),
        SdeModel::Nonlinear(_) => Err(config_error("this subcommand needs a linear model")),
    }
}

/// Writes artifacts then `<name>.json`, echoes the summary, returns the exit code.
fn emit(out: &Path, name: &str, summary: &serde_json::Value, files: &[(String, Vec<u8>)], pass: bool) -> Result<i32, ExperimentError> {
    for (file, bytes) in files {
        write_atomic(&out.join(file), bytes)?;
    }
    let bytes = to_json_bytes(summary);
    write_atomic(&out.join(format!("{name}.json")), &bytes)?;
    println!("{}", String::from_utf8_lossy(&bytes).trim_end());
    Ok(if pass { EXIT_PASS } else { EXIT_PREDICATE_FAIL })
}

fn moments_table(d: usize) -> CsvTable {
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|i| format!("m{i}")));
    header.extend((1..=d).flat_map(|i| (1..=d).map(move |j| format!("S{i}_{j}"))));
    CsvTable::new(header)
}

fn execute(cli: Cli) -> Result<i32, ExperimentError> {
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate {
            t0,
            t1,
            dt,
            n,
            x0,
            record_every,
            paths,
        } => {
            let model = require_model(&cli.config)?;
            let d = model.dim();
            let x0 = if x0.is_empty() { vec![0.0; d] } else { x0 };
            if x0.len() != d {
                return Err(config_error(format!("--x0 needs {d} entries")));
            }
            let opts = SimOptions { record_every };
            let ens = simulate_ensemble_with(&model, &EmpiricalMeasure::dirac(&x0), t0, t1, dt, n, cli.seed, &opts)?;
            let mut table = moments_table(d);
            for k in 0..ens.times().len() {
                let (m, s) = ens.moments_at(k);
                table.push_numbers(std::iter::once(ens.times()[k]).chain(m).chain(s));
            }
            let mut files = vec![("simulate/moments.csv".to_string(), table.to_bytes())];
            if paths {
                files.push(("simulate/paths.csv".to_string(), write_path_csv(&full_law_path(&ens))?));
            }
            let last = ens.times().len() - 1;
            let (m, s) = ens.moments_at(last);
            let summary = json!({
                "subcommand": "simulate",
                "seed": cli.seed,
                "t0": t0, "t1": t1, "dt": dt, "n_paths": n, "record_every": record_every,
                "x0": x0,
                "terminal_time": ens.times()[last],
                "terminal_mean": m,
                "terminal_second_moment": s,
                "artifacts": files.iter().map(|f| f.0.clone()).collect::<Vec<_>>(),
            });
            emit(out, "simulate", &summary, &files, true)
        }
        Command::MomentFlow { t0, t1, dt, x0, burn_in } => {
            let model = require_linear(&cli.config)?;
            let dt = dt.unwrap_or_else(|| step_limit(&model));
            let flow: MomentFlow = match &x0 {
                Some(x) => {
                    let s: Vec<f64> = x.iter().flat_map(|a| x.iter().map(move |b| a * b)).collect();
                    propagate_moments(&model, x, &s, t0, t1, dt)?
                }
                None => bounded_flow(&model, burn_in, (t0, t1), dt)?,
            };
            let minimal = minimal_value(&flow).ok();
            let (sym, psd) = flow.invariant_violation();
            let files = vec![("moment-flow/flow.csv".to_string(), flow.csv_table().to_bytes())];
            let summary = json!({
                "subcommand": "moment-flow",
                "t0": t0, "t1": t1, "dt": dt,
                "start": if x0.is_some() { "state" } else { "bounded" },
                "certificate": flow.certificate(),
                "minimal_value": minimal,
                "symmetry_violation": sym,
                "psd_violation": psd,
                "artifacts": ["moment-flow/flow.csv"],
            });
            emit(out, "moment-flow", &summary, &files, true)
        }
        Command::ApTest {
            path,
            epsilon,
            scan_min,
            scan_max,
            tau_step,
            window,
            burn_in,
        } => {
            let window = match window.as_deref() {
                None => None,
                Some([a, b]) => Some((*a, *b)),
                Some(_) => return Err(config_error("--window needs two values a,b")),
            };
            let law_path: MeasurePath = match &path {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
                    read_gaussian_path_csv(&text)
                        .or_else(|_| read_empirical_path_csv(&text))
                        .map_err(|e| config_error(format!("{}: {e}", p.display())))?
                }
                None => {
                    let model = require_linear(&cli.config)?;
                    let end = window.map_or(0.0, |w| w.1).max(scan_max) + scan_max;
                    let k = (tau_step / step_limit(&model) - 1e-9).ceil().max(1.0) as usize;
                    let flow = bounded_flow(&model, burn_in, (0.0, end), tau_step / k as f64)?;
                    let full = flow.law_path()?;
                    let idx: Vec<usize> = (0..full.len()).step_by(k).collect();
                    MeasurePath::new(
                        idx.iter().map(|&i| full.times()[i]).collect(),
                        idx.iter().map(|&i| full.laws()[i].clone()).collect(),
                    )?
                }
            };
            let opts = ApTestOptions {
                t_window: window,
                ..ApTestOptions::default()
            };
            let report = ap_distribution_test_with(&law_path, epsilon, (scan_min, scan_max), tau_step, &opts)?;
            let files = vec![("ap-test/profile.csv".to_string(), report.profile_csv().to_bytes())];
            let summary = json!({
                "subcommand": "ap-test",
                "verdict": report.verdict,
                "epsilon": epsilon,
                "scan": report.scan,
                "tau_step": tau_step,
                "detected_periods": report.detected_periods,
                "max_gap": report.max_gap,
                "relatively_dense_within_scan": report.relatively_dense_within_scan,
                "t_window": report.t_window,
                "t_points": report.t_points,
                "subsampled": report.subsampled,
                "upper_bound": report.upper_bound,
                "artifacts": ["ap-test/profile.csv"],
            });
            emit(out, "ap-test", &summary, &files, report.verdict == ApVerdict::APEvidence)
        }
        Command::FavardCheck { scan_t, tol } => {
            let model = require_linear(&cli.config)?;
            let verdict = favard_check(&model, scan_t, tol)?;
            let pass = matches!(verdict.verdict, FavardOutcome::VacuouslyHolds | FavardOutcome::Holds);
            let summary = json!({ "subcommand": "favard-check", "pass": pass, "result": verdict });
            emit(out, "favard-check", &summary, &[], pass)
        }
        Command::LyapunovCheck { l0 } => {
            let model = require_model(&cli.config)?;
            let spec = ExperimentSpec::new(ExperimentName::Lyapunov, cli.seed)
                .with_model(model)
                .with_param("l0", l0);
            let output = run(&spec)?;
            let summary = serde_json::to_value(&output.report).expect("serializable report");
            emit(out, "lyapunov-check", &summary, &output.files, output.report.pass)
        }
        Command::Experiment { name, params } => {
            let name: ExperimentName = name.parse()?;
            let mut spec = ExperimentSpec::new(name, cli.seed);
            spec.model = load_model(&cli.config)?;
            for kv in &params {
                let (k, v) = parse_param(kv)?;
                spec.params.insert(k, v);
            }
            let output = run(&spec)?;
            output.write_to(out)?;
            println!("{}", String::from_utf8_lossy(&output.json_bytes()).trim_end());
            Ok(output.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", json!({ "error": e.code(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
