//! Experiment runners. Each returns plain rows; writing is done by the CLI.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use safeuq_core::bench1d::{self, Bench1dConfig};
use safeuq_core::estimators::{dropout::McDropoutModel, fit_mc_dropout, EstimatorKind, FittedModel, PosteriorPrediction, Predictor};
use safeuq_core::metrics::{self, EvalSplit, MetricReport, Region};
use safeuq_core::sim::{self, ControllerKind, EpisodeReport, SimConfig};

use crate::config::{Bench1dExperiment, SensitivityExperiment, ShrinkageExperiment, SimulateExperiment, SweepExperiment};
use crate::error::Result;

/// Maps `f` over `items` on up to `jobs` scoped threads, keeping order.
pub fn parallel_map<T, R, F>(items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every slot filled"))
        .collect()
}

fn with_seed(data: &Bench1dConfig, seed: u64) -> Bench1dConfig {
    Bench1dConfig { seed, ..data.clone() }
}

/// One estimator of a bench1d sweep: metrics, or the error that stopped it.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub estimator: String,
    pub kind: EstimatorKind,
    pub seed: u64,
    pub outcome: std::result::Result<MetricReport, String>,
    pub predictions: Vec<PosteriorPrediction>,
    pub model: Option<FittedModel>,
}

pub struct Bench1dOutput {
    pub split: EvalSplit,
    pub train: safeuq_core::data::Dataset,
    pub rows: Vec<SweepRow>,
}

fn evaluate(kind: &EstimatorKind, exp: &Bench1dExperiment, seed: u64, train: &safeuq_core::data::Dataset, split: &EvalSplit) -> SweepRow {
    let spec = exp.network.spec();
    let cfg = exp.training.train_config(seed);
    let mut row = SweepRow {
        estimator: kind.name().to_string(),
        kind: kind.clone(),
        seed,
        outcome: Err(String::new()),
        predictions: Vec::new(),
        model: None,
    };
    let run = || -> safeuq_core::Result<(MetricReport, Vec<PosteriorPrediction>, FittedModel)> {
        let t0 = Instant::now();
        let model = kind.fit(train, &spec, &cfg)?;
        let train_t = t0.elapsed().as_secs_f64();
        let t1 = Instant::now();
        let preds = model.predict_many(&split.inputs)?;
        let infer_t = t1.elapsed().as_secs_f64();
        let sens = metrics::sensitivity(&model, &split.inputs, metrics::SENSITIVITY_DX)?;
        let report = MetricReport::from_predictions(&preds, split, sens, train_t, infer_t)?;
        Ok((report, preds, model))
    };
    match run() {
        Ok((report, preds, model)) => {
            row.outcome = Ok(report);
            row.predictions = preds;
            row.model = Some(model);
        }
        Err(e) => row.outcome = Err(e.to_string()),
    }
    row
}

/// Fits and scores every configured estimator on one seeded dataset.
/// A failing estimator produces an error row and the sweep continues.
pub fn run_bench1d(exp: &Bench1dExperiment, seed: u64, jobs: usize) -> Result<Bench1dOutput> {
    let (train, split) = bench1d::generate(&with_seed(&exp.data, seed))?;
    let kinds: Vec<EstimatorKind> = exp.estimators.iter().map(|e| e.0.clone()).collect();
    let rows = parallel_map(&kinds, jobs, |k| evaluate(k, exp, seed, &train, &split));
    Ok(Bench1dOutput { split, train, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageRow {
    pub estimator: String,
    pub factor: usize,
    pub mean_in_domain_variance: Option<f64>,
    pub error: Option<String>,
}

pub fn run_shrinkage(exp: &ShrinkageExperiment, seed: u64, jobs: usize) -> Result<Vec<ShrinkageRow>> {
    let (train, split) = bench1d::generate(&with_seed(&exp.data, seed))?;
    let spec = exp.network.spec();
    let cfg = exp.training.train_config(seed);
    let cells: Vec<(EstimatorKind, usize)> = exp
        .estimators
        .iter()
        .flat_map(|e| exp.factors.iter().map(move |&f| (e.0.clone(), f)))
        .collect();
    Ok(parallel_map(&cells, jobs, |(kind, factor)| {
        let run = || -> safeuq_core::Result<f64> {
            if *factor == 0 {
                return Err(safeuq_core::Error::InvalidArgument("duplication factor must be >= 1".into()));
            }
            let model = kind.fit(&train.repeated(*factor), &spec, &cfg)?;
            bench1d::mean_in_domain_variance(&model, &split)
        };
        let r = run();
        ShrinkageRow {
            estimator: kind.name().to_string(),
            factor: *factor,
            mean_in_domain_variance: r.as_ref().ok().copied(),
            error: r.err().map(|e| e.to_string()),
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub estimator: String,
    pub seed: u64,
    pub sensitivity: f64,
}

/// MC-Dropout with fresh and with frozen masks, sharing one trained network
/// per seed, scored on the bench1d test inputs.
pub fn run_sensitivity(exp: &SensitivityExperiment, seed: u64, jobs: usize) -> Result<Vec<SensitivityRow>> {
    let seeds = if exp.seeds.is_empty() { vec![seed] } else { exp.seeds.clone() };
    let per_seed = parallel_map(&seeds, jobs, |&s| -> Result<Vec<SensitivityRow>> {
        let (train, split) = bench1d::generate(&with_seed(&exp.data, s))?;
        let spec = exp.network.spec().with_dropout(exp.rate);
        let params = fit_mc_dropout(&train, &spec, &exp.training.train_config(s))?;
        let mut rows = Vec::new();
        for (name, frozen) in [("MC-Dropout", false), ("MC-DropF", true)] {
            let model = McDropoutModel::new(params.clone(), spec.clone(), exp.n_samples, frozen, s)?;
            rows.push(SensitivityRow {
                estimator: name.to_string(),
                seed: s,
                sensitivity: metrics::sensitivity(&model, &split.inputs, exp.dx)?,
            });
        }
        Ok(rows)
    });
    let mut out = Vec::new();
    for r in per_seed {
        out.extend(r?);
    }
    Ok(out)
}

/// Runs `runs` seeded episodes of one controller at one risk level.
pub fn run_simulate(exp: &SimulateExperiment, seed: u64, jobs: usize) -> Vec<(u64, std::result::Result<EpisodeReport, String>)> {
    let seeds: Vec<u64> = (0..exp.runs).map(|r| sim::run_seed(seed, r)).collect();
    parallel_map(&seeds, jobs, |&s| {
        let cfg = SimConfig {
            seed: s,
            p_k: exp.p_k,
            ..exp.sim.clone()
        };
        (s, sim::run_episode(&cfg, exp.estimator).map_err(|e| e.to_string()))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub estimator: ControllerKind,
    pub p_k: f64,
    pub seeds: Vec<u64>,
    pub error_rates: Vec<f64>,
    pub condition_failure_rates: Vec<f64>,
    pub mean_error_rate: f64,
    pub mean_condition_failure_rate: f64,
    pub failures: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Error rate for every (controller, p) cell over `runs` seeds. The baseline
/// ignores p, so its episodes run once and fill every p column.
pub fn run_sweep(exp: &SweepExperiment, seed: u64, jobs: usize) -> Vec<SweepCell> {
    let seeds: Vec<u64> = (0..exp.runs).map(|r| sim::run_seed(seed, r)).collect();
    let mut jobs_list: Vec<(ControllerKind, f64, u64)> = Vec::new();
    for &k in &exp.estimators {
        let ps: &[f64] = if k == ControllerKind::Baseline || k == ControllerKind::Oracle {
            &exp.p_values[..exp.p_values.len().min(1)]
        } else {
            &exp.p_values
        };
        for &p in ps {
            for &s in &seeds {
                jobs_list.push((k, p, s));
            }
        }
    }
    let results = parallel_map(&jobs_list, jobs, |&(k, p, s)| {
        let cfg = SimConfig {
            seed: s,
            p_k: p,
            ..exp.sim.clone()
        };
        sim::run_episode(&cfg, k).map_err(|e| format!("seed {s}: {e}"))
    });
    let mut cells = Vec::new();
    for &k in &exp.estimators {
        for &p in &exp.p_values {
            let shared = k == ControllerKind::Baseline || k == ControllerKind::Oracle;
            let mut cell = SweepCell {
                estimator: k,
                p_k: p,
                seeds: Vec::new(),
                error_rates: Vec::new(),
                condition_failure_rates: Vec::new(),
                mean_error_rate: f64::NAN,
                mean_condition_failure_rate: f64::NAN,
                failures: Vec::new(),
            };
            for ((jk, jp, js), r) in jobs_list.iter().zip(&results) {
                if *jk != k || (!shared && *jp != p) {
                    continue;
                }
                match r {
                    Ok(rep) => {
                        cell.seeds.push(*js);
                        cell.error_rates.push(rep.error_rate);
                        cell.condition_failure_rates
                            .push(rep.condition_failures as f64 / rep.steps_cbc_active.max(1) as f64);
                    }
                    Err(e) => cell.failures.push(e.clone()),
                }
            }
            cell.mean_error_rate = mean(&cell.error_rates);
            cell.mean_condition_failure_rate = mean(&cell.condition_failure_rates);
            cells.push(cell);
        }
    }
    cells
}

/// `(x, mean, variance, region)` rows of one estimator's test predictions.
pub fn curve_rows(split: &EvalSplit, preds: &[PosteriorPrediction]) -> Vec<(f64, f64, f64, &'static str)> {
    split
        .inputs
        .iter_rows()
        .zip(preds)
        .zip(&split.regions)
        .map(|((x, p), r)| {
            (
                x[0],
                p.mean[0],
                p.variance[0],
                match r {
                    Region::InDomain => "in_domain",
                    Region::Ood => "ood",
                },
            )
        })
        .collect()
}
