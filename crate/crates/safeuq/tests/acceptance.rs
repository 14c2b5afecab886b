//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use safeuq::cli::dispatch;
use safeuq::config::{Bench1dExperiment, Estimator, SensitivityExperiment, ShrinkageExperiment, SweepExperiment};
use safeuq::experiments::{run_bench1d, run_sensitivity, run_shrinkage, run_sweep, SweepCell};
use safeuq_core::cbf::risk_multiplier;
use safeuq_core::estimators::EstimatorKind;
use safeuq_core::sim::{run_episode, run_seed, ControllerKind, SimConfig};
use safeuq_core::socp::{solve, SolveStatus};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c1_gp_oracle() -> Outcome {
    let worst = (0..50u64).map(|s| common::gp_oracle_error(1000 + s)).fold(0.0, f64::max);
    outcome(worst < 1e-8, format!("max scaled error {worst:.1e} over 50 datasets (tol 1e-8)"))
}

fn c2_gradients() -> Outcome {
    let mut worst = [0.0f64; 3];
    for seed in 0..50u64 {
        for (which, w) in worst.iter_mut().enumerate() {
            *w = w.max(common::gradient_rel_error(seed * 3 + which as u64, which));
        }
    }
    let detail = common::LOSS_NAMES
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(worst.iter().all(|w| *w < 1e-4), format!("max rel err {detail} over 50 instances each (tol 1e-4)"))
}

fn c3_cone_solver() -> Outcome {
    let (mut worst, mut infeasible, mut bad) = (0.0f64, 0, Vec::new());
    for seed in 0..200u64 {
        let prog = common::random_program(seed);
        let sol = match solve(&prog) {
            Ok(s) => s,
            Err(e) => {
                bad.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        match common::grid_oracle(&prog) {
            Some((_, best)) => {
                let gap = (sol.objective - best).abs() / (1.0 + best.abs());
                worst = worst.max(gap);
                if sol.status != SolveStatus::Optimal || gap > 1e-3 {
                    bad.push(format!("seed {seed}: gap {gap:.1e}"));
                }
            }
            None => {
                infeasible += 1;
                if sol.status == SolveStatus::Optimal {
                    bad.push(format!("seed {seed}: optimal on oracle-infeasible program"));
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("200 programs, {infeasible} oracle-infeasible, max scaled gap {worst:.1e} (tol 1e-3){}", fail_list(&bad)),
    )
}

fn fail_list(bad: &[String]) -> String {
    if bad.is_empty() {
        String::new()
    } else {
        format!("; failures: {}", bad.join("; "))
    }
}

fn c4_risk_multiplier() -> Outcome {
    let mut worst = 0.0f64;
    for p in [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99] {
        match risk_multiplier(p) {
            Ok(c) => worst = worst.max((c - common::normal_quantile_oracle(p)).abs()),
            Err(_) => worst = f64::INFINITY,
        }
    }
    outcome(worst < 1e-9, format!("max abs error {worst:.1e} over the p grid (tol 1e-9)"))
}

fn c5_table_orderings() -> Outcome {
    let names = ["SWAG", "MC-Dropout", "Laplace", "Ensemble", "Anchored", "MLLV", "DEUP", "DADEE"];
    let exp = Bench1dExperiment {
        estimators: names
            .iter()
            .map(|n| Estimator(EstimatorKind::by_name(n).expect("registered")))
            .collect(),
        ..Bench1dExperiment::default()
    };
    // estimator -> (rmsce, rmsce_in, rmsce_ood) per seed
    let mut runs: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
    for seed in 0..5u64 {
        let out = match run_bench1d(&exp, seed, jobs()) {
            Ok(o) => o,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        for row in out.rows {
            match row.outcome {
                Ok(r) => runs.entry(row.estimator).or_default().push([r.rmsce, r.rmsce_in, r.rmsce_ood]),
                Err(e) => return outcome(false, format!("{} seed {seed}: {e}", row.estimator)),
            }
        }
    }
    let med = |name: &str, k: usize| median(runs[name].iter().map(|r| r[k]).collect());
    let a = med("DEUP", 1) < med("Anchored", 1);
    let b = med("Anchored", 2) < med("Ensemble", 2);
    let dadee = med("DADEE", 0);
    let c = names.iter().filter(|n| **n != "DADEE").all(|n| dadee < med(n, 0));
    let targets = [
        ("DEUP in", med("DEUP", 1), 0.067),
        ("Anchored in", med("Anchored", 1), 0.491),
        ("Anchored ood", med("Anchored", 2), 0.196),
        ("Ensemble ood", med("Ensemble", 2), 0.474),
        ("DADEE overall", dadee, 0.069),
    ];
    let band = targets.iter().all(|(_, v, t)| (v - t).abs() <= 0.15);
    let overall = names
        .iter()
        .map(|n| format!("{n} {:.3}", med(n, 0)))
        .collect::<Vec<_>>()
        .join(", ");
    let vals = targets
        .iter()
        .map(|(n, v, t)| format!("{n} {v:.3} (ref {t})"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        a && b && c && band,
        format!("(a) {a} (b) {b} (c) {c} band {band}; medians over 5 seeds: {vals}; overall RMSCE {overall}"),
    )
}

fn c6_shrinkage() -> Outcome {
    let rows = match run_shrinkage(&ShrinkageExperiment::default(), 0, jobs()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let series = |name: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.estimator == name)
            .map(|r| r.mean_in_domain_variance.unwrap_or(f64::NAN))
            .collect()
    };
    let ens = series("Ensemble");
    let decreasing = ens.len() == 4 && ens.windows(2).all(|w| w[1] < w[0]);
    let noise = 1.0 / 12.0;
    let mut direct_ok = true;
    let mut detail = format!("Ensemble {}", fmt_series(&ens));
    for name in ["DEUP", "DADEE"] {
        let s = series(name);
        direct_ok &= s.len() == 4 && s.iter().all(|v| (v - noise).abs() <= 0.5 * noise);
        detail.push_str(&format!("; {name} {}", fmt_series(&s)));
    }
    outcome(
        decreasing && direct_ok,
        format!("ensemble strictly decreasing {decreasing}, direct within 50% of 1/12 {direct_ok}; {detail}"),
    )
}

fn fmt_series(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" -> ")
}

fn c7_sensitivity() -> Outcome {
    let exp = SensitivityExperiment {
        seeds: (0..5).collect(),
        ..SensitivityExperiment::default()
    };
    let rows = match run_sensitivity(&exp, 0, jobs()) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for seed in 0..5u64 {
        let get = |n: &str| rows.iter().find(|r| r.seed == seed && r.estimator == n).map_or(f64::NAN, |r| r.sensitivity);
        let (fresh, frozen) = (get("MC-Dropout"), get("MC-DropF"));
        ok &= fresh > frozen && frozen > 0.0;
        detail.push(format!("seed {seed}: {fresh:.3} > {frozen:.3}"));
    }
    outcome(ok, detail.join(", "))
}

fn c8_oracle_safety() -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for run in 0..5 {
        let cfg = SimConfig {
            episode_steps: 5000,
            seed: run_seed(0, run),
            ..SimConfig::default()
        };
        match run_episode(&cfg, ControllerKind::Oracle) {
            Ok(rep) => {
                let (hc, ho) = rep.min_barrier();
                ok &= rep.violations == 0 && hc >= 0.0 && ho >= 0.0;
                detail.push(format!("{} violations, min h {:.3}/{:.3}", rep.violations, hc, ho));
            }
            Err(e) => {
                ok = false;
                detail.push(e.to_string());
            }
        }
    }
    outcome(ok, format!("5000 steps x 5 seeds: {}", detail.join("; ")))
}

fn cell(cells: &[SweepCell], k: ControllerKind, p: f64) -> f64 {
    cells
        .iter()
        .find(|c| c.estimator == k && c.p_k == p)
        .filter(|c| c.failures.is_empty() && c.error_rates.len() == 20)
        .map_or(f64::NAN, |c| c.mean_error_rate)
}

fn c9_error_rate_trends() -> Outcome {
    let p_values = vec![0.5, 0.6, 0.7, 0.8, 0.9];
    let main = SweepExperiment {
        sim: SimConfig::default(),
        estimators: vec![ControllerKind::Baseline, ControllerKind::Dadee],
        p_values: p_values.clone(),
        runs: 20,
    };
    let anchored = SweepExperiment {
        estimators: vec![ControllerKind::Anchored],
        p_values: vec![0.5, 0.9],
        ..main.clone()
    };
    let mut cells = run_sweep(&main, 0, jobs());
    cells.extend(run_sweep(&anchored, 0, jobs()));
    let base = cell(&cells, ControllerKind::Baseline, 0.5);
    let dadee: Vec<f64> = p_values.iter().map(|&p| cell(&cells, ControllerKind::Dadee, p)).collect();
    let a = dadee.iter().all(|d| base > *d);
    let b = dadee[4] < 0.05 && dadee[4] < dadee[0];
    let (an5, an9) = (cell(&cells, ControllerKind::Anchored, 0.5), cell(&cells, ControllerKind::Anchored, 0.9));
    let c = an9 < an5;
    let row = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    outcome(
        a && b && c,
        format!(
            "(a) {a} (b) {b} (c) {c}; 20 runs/cell; baseline {base:.4}; DADEE p=0.5..0.9 {}; Anchored p=0.5 {an5:.4} p=0.9 {an9:.4}",
            row(&dadee)
        ),
    )
}

/// CSV text with the named columns removed.
fn drop_columns(text: &str, names: &[&str]) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let keep: Vec<usize> = (0..header.len()).filter(|i| !names.contains(&header[*i])).collect();
    std::iter::once(header)
        .chain(lines.map(|l| l.split(',').collect()))
        .map(|cells: Vec<&str>| keep.iter().map(|&i| cells.get(i).copied().unwrap_or("")).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
}

fn c10_determinism() -> Outcome {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return outcome(false, e.to_string()),
    };
    let small_data = r#""data": {"n_train": 120, "n_test": 200}, "training": {"epochs": 60}"#;
    let commands: [(&str, String, &[&str]); 5] = [
        ("bench1d", format!(r#"{{{small_data}, "estimators": ["Anchored", "DEUP", "DADEE", "MC-Dropout", "SWAG"]}}"#), &[]),
        ("shrinkage", format!(r#"{{{small_data}, "factors": [1, 2]}}"#), &[]),
        ("sensitivity", format!(r#"{{{small_data}, "seeds": [0, 1]}}"#), &[]),
        ("simulate", r#"{"sim": {"episode_steps": 150}, "runs": 2}"#.to_string(), &["--traj"]),
        ("sweep", r#"{"sim": {"episode_steps": 80}, "runs": 2, "p_values": [0.5, 0.8]}"#.to_string(), &[]),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (cmd, cfg, extra) in commands {
        let cfg_path = dir.path().join(format!("{cmd}.json"));
        if fs::write(&cfg_path, cfg).is_err() {
            return outcome(false, "cannot write config".into());
        }
        let mut outputs = Vec::new();
        for rep in ["a", "b"] {
            let base = dir.path().join(rep);
            let out = base.join(format!("{cmd}.csv"));
            let mut argv: Vec<String> = ["safeuq", cmd, "--seed", "3", "--jobs", "2", "--config"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            argv.push(cfg_path.display().to_string());
            argv.push("--out".into());
            argv.push(out.display().to_string());
            if extra.contains(&"--traj") {
                argv.push("--traj".into());
                argv.push(base.join("traj").display().to_string());
            }
            let code = dispatch(argv);
            ok &= code == 0;
            outputs.push(snapshot(&base, cmd));
        }
        let same = outputs[0] == outputs[1] && !outputs[0].is_empty();
        ok &= same;
        detail.push(format!("{cmd} {}", if same { "identical" } else { "DIFFERS" }));
    }
    outcome(ok, detail.join(", "))
}

/// Non-timing content of every output of `cmd` under `base`.
fn snapshot(base: &Path, cmd: &str) -> Vec<(String, String)> {
    let mut files = Vec::new();
    let csv = base.join(format!("{cmd}.csv"));
    if let Ok(t) = fs::read_to_string(&csv) {
        files.push(("csv".into(), drop_columns(&t, &["train_time_s", "infer_time_s"])));
    }
    if let Ok(t) = fs::read_to_string(base.join(format!("{cmd}.json"))) {
        let mut v: serde_json::Value = serde_json::from_str(&t).unwrap_or_default();
        strip_keys(&mut v, &["train_time_s", "infer_time_s"]);
        files.push(("json".into(), v.to_string()));
    }
    if let Ok(t) = fs::read_to_string(base.join(format!("{cmd}.manifest.json"))) {
        let mut v: serde_json::Value = serde_json::from_str(&t).unwrap_or_default();
        strip_keys(&mut v, &["started_at_unix", "finished_at_unix", "artifacts"]);
        files.push(("manifest".into(), v.to_string()));
    }
    if let Ok(rd) = fs::read_dir(base.join("traj")) {
        let mut names: Vec<_> = rd.flatten().map(|e| e.path()).collect();
        names.sort();
        for p in names {
            files.push((p.file_name().unwrap().to_string_lossy().into(), fs::read_to_string(&p).unwrap_or_default()));
        }
    }
    files
}

fn strip_keys(v: &mut serde_json::Value, keys: &[&str]) {
    match v {
        serde_json::Value::Object(m) => {
            for k in keys {
                m.remove(*k);
            }
            m.values_mut().for_each(|x| strip_keys(x, keys));
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(|x| strip_keys(x, keys)),
        _ => {}
    }
}

fn main() {
    let criteria: [(u32, &str, f64, fn() -> Outcome); 10] = [
        (1, "GP oracle equivalence", 5.0, c1_gp_oracle),
        (2, "gradient suite", 10.0, c2_gradients),
        (3, "cone-solver oracle", 60.0, c3_cone_solver),
        (4, "risk multiplier", 1.0, c4_risk_multiplier),
        (5, "1-D benchmark orderings", 900.0, c5_table_orderings),
        (6, "shrinkage", 600.0, c6_shrinkage),
        (7, "sensitivity ordering", 120.0, c7_sensitivity),
        (8, "closed-loop safety oracle", 120.0, c8_oracle_safety),
        (9, "error-rate trends", 1800.0, c9_error_rate_trends),
        (10, "determinism", f64::INFINITY, c10_determinism),
    ];
    // `cargo test -- <filter>` passes criterion numbers to run a subset.
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, limit, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let in_time = secs < limit;
        let pass = o.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit_txt = if limit.is_finite() { format!(" < {limit:.0}s") } else { String::new() };
        println!(
            "criterion {id:>2} {}  {name}: {} [{secs:.1}s{limit_txt}{}]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            if in_time { "" } else { " OVER TIME" }
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
