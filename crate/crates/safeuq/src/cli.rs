//! Argument parsing and command dispatch.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use safeuq_core::sim::{ControllerKind, EpisodeReport};

use crate::config::{
    parse_config, Bench1dExperiment, ConfigError, SensitivityExperiment, ShrinkageExperiment, SimulateExperiment,
    SweepExperiment,
};
use crate::error::{AppError, Result};
use crate::experiments;
use crate::io::{csv_writer, save_model, write_json, ModelInfo};
use crate::manifest::{manifest_path, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "safeuq", version, about = "Uncertainty estimators, calibration metrics and a chance-constrained CBF simulator")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Root seed; overrides the seed in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file (CSV). A JSON twin and a manifest are written beside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for independent runs. Defaults to the available cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// JSON config file. Missing keys take the defaults shown in `--help`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit every estimator on the 1-D cubic benchmark and score it.
    #[command(after_long_help = defaults_help::<Bench1dExperiment>())]
    Bench1d {
        /// Directory for per-estimator (x, mean, variance, region) CSVs.
        #[arg(long)]
        plots: Option<PathBuf>,
        /// Directory to save the fitted models in.
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// In-domain variance as the training set is duplicated.
    #[command(after_long_help = defaults_help::<ShrinkageExperiment>())]
    Shrinkage,
    /// Output sensitivity of MC-Dropout with fresh and frozen masks.
    #[command(after_long_help = defaults_help::<SensitivityExperiment>())]
    Sensitivity,
    /// Closed-loop episodes of one controller at one risk level.
    #[command(after_long_help = defaults_help::<SimulateExperiment>())]
    Simulate {
        /// oracle, baseline, mc_dropout, anchored, deup or dadee.
        #[arg(long, value_parser = parse_controller)]
        estimator: Option<ControllerKind>,
        /// Acceptance probability p_k in [0.5, 1).
        #[arg(long)]
        p: Option<f64>,
        /// Number of seeded episodes.
        #[arg(long)]
        runs: Option<usize>,
        /// Directory for per-run trajectory CSVs.
        #[arg(long)]
        traj: Option<PathBuf>,
    },
    /// Error rate for every (controller, p_k) cell.
    #[command(after_long_help = defaults_help::<SweepExperiment>())]
    Sweep {
        /// Seeded episodes per cell.
        #[arg(long)]
        runs: Option<usize>,
    },
}

fn parse_controller(s: &str) -> std::result::Result<ControllerKind, String> {
    ControllerKind::by_name(s).ok_or_else(|| format!("unknown controller `{s}`"))
}

fn defaults_help<T: Default + Serialize>() -> String {
    let json = serde_json::to_string_pretty(&T::default()).expect("defaults serialize");
    format!("Config keys and defaults:\n{json}")
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 success, 1 usage or config error, 2 runtime failure.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    Ok(match path {
        Some(p) => parse_config(p)?,
        None => T::default(),
    })
}

fn jobs(global: &GlobalArgs) -> usize {
    global
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn out_path(global: &GlobalArgs, default: &str) -> PathBuf {
    global.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let config = g.config.as_deref();
    let jobs = jobs(g);
    match cli.command {
        Command::Bench1d { plots, models } => {
            let mut exp: Bench1dExperiment = load(config)?;
            if let Some(s) = g.seed {
                exp.data.seed = s;
            }
            exp.data.validate()?;
            bench1d(&exp, &out_path(g, "results.csv"), plots.as_deref(), models.as_deref(), jobs)
        }
        Command::Shrinkage => {
            let mut exp: ShrinkageExperiment = load(config)?;
            if let Some(s) = g.seed {
                exp.data.seed = s;
            }
            exp.data.validate()?;
            shrinkage(&exp, &out_path(g, "shrinkage.csv"), jobs)
        }
        Command::Sensitivity => {
            let mut exp: SensitivityExperiment = load(config)?;
            if let Some(s) = g.seed {
                exp.data.seed = s;
            }
            exp.data.validate()?;
            sensitivity(&exp, &out_path(g, "sensitivity.csv"), jobs)
        }
        Command::Simulate { estimator, p, runs, traj } => {
            let mut exp: SimulateExperiment = load(config)?;
            if let Some(s) = g.seed {
                exp.sim.seed = s;
            }
            if let Some(k) = estimator {
                exp.estimator = k;
            }
            if let Some(p) = p {
                exp.p_k = p;
            }
            if let Some(r) = runs {
                exp.runs = r;
            }
            exp.sim.validate()?;
            check_p(exp.p_k)?;
            simulate(&exp, &out_path(g, "table2.csv"), traj.as_deref(), jobs)
        }
        Command::Sweep { runs } => {
            let mut exp: SweepExperiment = load(config)?;
            if let Some(s) = g.seed {
                exp.sim.seed = s;
            }
            if let Some(r) = runs {
                exp.runs = r;
            }
            exp.sim.validate()?;
            for &p in &exp.p_values {
                check_p(p)?;
            }
            sweep(&exp, &out_path(g, "sweep.csv"), jobs)
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.5..1.0).contains(&p) {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("p_k must lie in [0.5, 1), got {p}")).into())
    }
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn finish(mut manifest: RunManifest, out: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
    manifest.artifacts = artifacts;
    manifest.finish(&manifest_path(out))?;
    Ok(())
}

fn bench1d(exp: &Bench1dExperiment, out: &Path, plots: Option<&Path>, models: Option<&Path>, jobs: usize) -> Result<()> {
    let seed = exp.data.seed;
    let manifest = RunManifest::start("bench1d", exp, seed)?;
    let res = experiments::run_bench1d(exp, seed, jobs)?;
    let mut artifacts = vec![out.to_path_buf()];

    let mut w = csv_writer(out)?;
    let mut header = vec!["estimator", "seed", "status"];
    header.extend(safeuq_core::metrics::MetricReport::COLUMNS);
    header.push("error");
    w.write_record(&header)?;
    for row in &res.rows {
        let mut rec = vec![row.estimator.clone(), row.seed.to_string()];
        match &row.outcome {
            Ok(r) => {
                rec.push("ok".into());
                rec.extend(r.values().iter().map(|&v| fmt(v)));
                rec.push(String::new());
            }
            Err(e) => {
                rec.push("error".into());
                rec.extend(std::iter::repeat_n(String::new(), 10));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| AppError::io(out, e))?;

    let json_path = out.with_extension("json");
    let json: Vec<serde_json::Value> = res
        .rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "estimator": r.estimator,
                "seed": r.seed,
                "report": r.outcome.as_ref().ok(),
                "error": r.outcome.as_ref().err(),
            })
        })
        .collect();
    write_json(&json_path, &json)?;
    artifacts.push(json_path);

    if let Some(dir) = plots {
        for row in res.rows.iter().filter(|r| r.outcome.is_ok()) {
            let path = dir.join(format!("{}.csv", row.estimator));
            let mut w = csv_writer(&path)?;
            w.write_record(["x", "mean", "variance", "region"])?;
            for (x, m, v, r) in experiments::curve_rows(&res.split, &row.predictions) {
                w.write_record([fmt(x), fmt(m), fmt(v), r.to_string()])?;
            }
            w.flush().map_err(|e| AppError::io(&path, e))?;
            artifacts.push(path);
        }
    }
    if let Some(dir) = models {
        let train = exp.training.train_config(seed);
        for row in &res.rows {
            if let Some(model) = &row.model {
                let info = ModelInfo {
                    kind: row.kind.clone(),
                    train: train.clone(),
                    seed,
                };
                artifacts.push(save_model(&dir.join(&row.estimator), model, &info)?);
            }
        }
    }
    for row in &res.rows {
        match &row.outcome {
            Ok(r) => println!(
                "{:<11} rmsce {:.3} in {:.3} ood {:.3} msll {:.3} mse {:.3}",
                row.estimator, r.rmsce, r.rmsce_in, r.rmsce_ood, r.msll, r.mse
            ),
            Err(e) => println!("{:<11} failed: {e}", row.estimator),
        }
    }
    finish(manifest, out, artifacts)
}

fn shrinkage(exp: &ShrinkageExperiment, out: &Path, jobs: usize) -> Result<()> {
    let seed = exp.data.seed;
    let manifest = RunManifest::start("shrinkage", exp, seed)?;
    let rows = experiments::run_shrinkage(exp, seed, jobs)?;
    let mut w = csv_writer(out)?;
    w.write_record(["estimator", "factor", "mean_in_domain_variance", "error"])?;
    for r in &rows {
        w.write_record([
            r.estimator.clone(),
            r.factor.to_string(),
            r.mean_in_domain_variance.map(fmt).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
        println!("{:<9} x{:<2} {}", r.estimator, r.factor, r.mean_in_domain_variance.map_or("failed".into(), |v| format!("{v:.4}")));
    }
    w.flush().map_err(|e| AppError::io(out, e))?;
    let json_path = out.with_extension("json");
    write_json(&json_path, &rows)?;
    finish(manifest, out, vec![out.to_path_buf(), json_path])
}

fn sensitivity(exp: &SensitivityExperiment, out: &Path, jobs: usize) -> Result<()> {
    let seed = exp.data.seed;
    let manifest = RunManifest::start("sensitivity", exp, seed)?;
    let rows = experiments::run_sensitivity(exp, seed, jobs)?;
    let mut w = csv_writer(out)?;
    w.write_record(["estimator", "seed", "sensitivity"])?;
    for r in &rows {
        w.write_record([r.estimator.clone(), r.seed.to_string(), fmt(r.sensitivity)])?;
        println!("{:<10} seed {:<4} {:.4}", r.estimator, r.seed, r.sensitivity);
    }
    w.flush().map_err(|e| AppError::io(out, e))?;
    let json_path = out.with_extension("json");
    write_json(&json_path, &rows)?;
    finish(manifest, out, vec![out.to_path_buf(), json_path])
}

fn write_trajectory(path: &Path, rep: &EpisodeReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record([
        "step", "x", "y", "theta", "v", "omega", "h_c", "h_o", "status", "active", "violation", "checkpoint",
    ])?;
    for r in &rep.trajectory {
        let [x, y, th] = r.state.pose;
        w.write_record([
            r.state.step.to_string(),
            fmt(x),
            fmt(y),
            fmt(th),
            fmt(r.u[0]),
            fmt(r.u[1]),
            fmt(r.h_couch),
            fmt(r.h_room),
            r.status.name().to_string(),
            u8::from(r.active).to_string(),
            u8::from(r.violation).to_string(),
            r.state.active_checkpoint.to_string(),
        ])?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

fn simulate(exp: &SimulateExperiment, out: &Path, traj: Option<&Path>, jobs: usize) -> Result<()> {
    let seed = exp.sim.seed;
    let manifest = RunManifest::start("simulate", exp, seed)?;
    let runs = experiments::run_simulate(exp, seed, jobs);
    let mut artifacts = vec![out.to_path_buf()];
    let mut w = csv_writer(out)?;
    w.write_record([
        "run",
        "seed",
        "controller",
        "p_k",
        "error_rate",
        "condition_failure_rate",
        "steps_cbc_active",
        "violations",
        "condition_failures",
        "infeasible_events",
        "checkpoints_reached",
        "min_h_c",
        "min_h_o",
        "error",
    ])?;
    let (mut rates, mut cond) = (Vec::new(), Vec::new());
    for (i, (s, r)) in runs.iter().enumerate() {
        let head = [i.to_string(), s.to_string(), exp.estimator.name().to_string(), fmt(exp.p_k)];
        match r {
            Ok(rep) => {
                let cf = rep.condition_failures as f64 / rep.steps_cbc_active.max(1) as f64;
                rates.push(rep.error_rate);
                cond.push(cf);
                let (hc, ho) = rep.min_barrier();
                let mut rec = head.to_vec();
                rec.extend([
                    fmt(rep.error_rate),
                    fmt(cf),
                    rep.steps_cbc_active.to_string(),
                    rep.violations.to_string(),
                    rep.condition_failures.to_string(),
                    rep.infeasible_events.to_string(),
                    rep.checkpoints_reached.len().to_string(),
                    fmt(hc),
                    fmt(ho),
                    String::new(),
                ]);
                w.write_record(&rec)?;
                if let Some(dir) = traj {
                    let path = dir.join(format!("run_{i:02}.csv"));
                    write_trajectory(&path, rep)?;
                    artifacts.push(path);
                }
            }
            Err(e) => {
                let mut rec = head.to_vec();
                rec.extend(std::iter::repeat_n(String::new(), 9));
                rec.push(e.clone());
                w.write_record(&rec)?;
            }
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mut rec = vec!["mean".to_string(), String::new(), exp.estimator.name().to_string(), fmt(exp.p_k)];
    rec.extend([fmt(mean(&rates)), fmt(mean(&cond))]);
    rec.extend(std::iter::repeat_n(String::new(), 8));
    w.write_record(&rec)?;
    w.flush().map_err(|e| AppError::io(out, e))?;
    println!(
        "{} p={} runs={} ok={} mean error rate {:.4}",
        exp.estimator.name(),
        exp.p_k,
        runs.len(),
        rates.len(),
        mean(&rates)
    );
    let failed = runs.len() - rates.len();
    finish(manifest, out, artifacts)?;
    if failed > 0 {
        return Err(AppError::Invalid(format!("{failed} of {} runs failed", runs.len())));
    }
    Ok(())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn sweep(exp: &SweepExperiment, out: &Path, jobs: usize) -> Result<()> {
    let seed = exp.sim.seed;
    let manifest = RunManifest::start("sweep", exp, seed)?;
    let cells = experiments::run_sweep(exp, seed, jobs);
    let mut w = csv_writer(out)?;
    w.write_record([
        "estimator",
        "p_k",
        "runs_ok",
        "mean_error_rate",
        "mean_condition_failure_rate",
        "seeds",
        "error_rates",
        "failures",
    ])?;
    for c in &cells {
        w.write_record([
            c.estimator.name().to_string(),
            fmt(c.p_k),
            c.error_rates.len().to_string(),
            fmt(c.mean_error_rate),
            fmt(c.mean_condition_failure_rate),
            join(&c.seeds),
            join(&c.error_rates),
            c.failures.join("; "),
        ])?;
        println!("{:<10} p={:<4} error rate {:.4}", c.estimator.name(), c.p_k, c.mean_error_rate);
    }
    w.flush().map_err(|e| AppError::io(out, e))?;
    let json_path = out.with_extension("json");
    write_json(&json_path, &cells)?;
    finish(manifest, out, vec![out.to_path_buf(), json_path])
}
