//! The four subcommands: `run`, `theory`, `check`, `sweep`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use spodgt::diagnostics::lemmas::{lemma_bound_suite, SuiteInstance};
use spodgt::diagnostics::{theory_report, MetricsTrace, TheoryContext};
use spodgt::mixing::ExpectedMixing;
use spodgt::optim::{self, AlgoConfig, OptimError, Variant};
use spodgt::problems::{
    centralized_reference, estimate_constants, exact_quadratic_constants, quadratic_minimizer,
    LossOracle,
};
use spodgt::sporadic::RngStreams;

use crate::config::{Overrides, RunConfigFile};

/// Traces of one run, keyed and ordered by (variant, repeat).
pub type VariantTraces = Vec<((String, usize), MetricsTrace)>;
use crate::experiment::{build_experiment, parse_x0, repeat_streams, resolve_run_parameters, Experiment};
use crate::CliError;

fn ensure_out_dir(cfg: &RunConfigFile) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(cfg.out_dir());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)?;
    Ok(())
}

fn install_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        _ => f(),
    }
}

/// Execute every requested variant on the shared graph/profile/problem and
/// write one trace CSV per (variant, repeat) plus a per-variant aggregate
/// over a fixed 200-point delay grid.
pub fn cmd_run(cfg: &RunConfigFile, ov: &Overrides) -> Result<(), CliError> {
    let out = ensure_out_dir(cfg)?;
    let exp = build_experiment(cfg)?;
    // the exact graph and device profile every variant observed
    write_file(&out.join("graph.txt"), &exp.g.to_edge_list())?;
    write_file(&out.join("profile.json"), &exp.profile.to_json_string())?;
    let traces = execute_variants(cfg, &exp, ov.jobs)?;
    for ((variant, repeat), trace) in &traces {
        let path = out.join(format!("trace_{}_r{}.csv", variant, repeat));
        write_file(&path, &trace.to_csv())?;
    }
    for variant in &cfg.run.variants {
        let group: Vec<&MetricsTrace> = traces
            .iter()
            .filter(|((v, _), _)| v == variant)
            .map(|(_, t)| t)
            .collect();
        let csv = aggregate_csv(&group);
        write_file(&out.join(format!("aggregate_{variant}.csv")), &csv)?;
    }
    Ok(())
}

/// Run all (variant, repeat) pairs; deterministic ordering of the result.
pub fn execute_variants(
    cfg: &RunConfigFile,
    exp: &Experiment,
    jobs: Option<usize>,
) -> Result<VariantTraces, CliError> {
    let (eta, batch, profile) = resolve_run_parameters(cfg, exp)?;
    let mut jobs_list = Vec::new();
    for variant in &cfg.run.variants {
        for repeat in 0..cfg.run.repeats {
            jobs_list.push((variant.clone(), repeat));
        }
    }
    type Keyed = ((String, usize), MetricsTrace);
    let master = cfg.master_seed();
    let results: Vec<Result<Keyed, CliError>> =
        install_pool(jobs, || {
            jobs_list
                .par_iter()
                .map(|(variant_name, repeat)| {
                    let variant = Variant::parse(variant_name).expect("validated");
                    let algo = AlgoConfig {
                        variant,
                        eta: eta.clone(),
                        batch: batch.clone(),
                        max_iter: cfg.run.max_iter,
                        log_stride: cfg.run.log_stride,
                        x0: parse_x0(&cfg.run.x0),
                        kgt_interval: None,
                    };
                    let streams = repeat_streams(master, *repeat);
                    let trace = optim::run(
                        &algo,
                        &exp.g,
                        &exp.pair,
                        &profile,
                        &exp.oracle,
                        &exp.ds,
                        &streams,
                        |_, _| {},
                    )
                    .map_err(|e| match e {
                        OptimError::Diverged { iteration } => CliError::Divergence(format!(
                            "variant {variant_name}, repeat {repeat}, iteration {iteration}"
                        )),
                        other => CliError::Config(other.to_string()),
                    })?;
                    Ok(((variant_name.clone(), *repeat), trace))
                })
                .collect()
        });
    let mut traces = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    traces.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(traces)
}

pub const DELAY_GRID_POINTS: usize = 200;

/// Aggregate repeats of one variant onto a fixed delay grid by linear
/// interpolation; emits mean and one-sigma columns per metric.
pub fn aggregate_csv(traces: &[&MetricsTrace]) -> String {
    let mut out = String::new();
    out.push_str(
        "delay,loss_mean,loss_std,grad_sq_norm_mean,grad_sq_norm_std,accuracy_mean,accuracy_std\n",
    );
    if traces.is_empty() {
        return out;
    }
    let t_max =
        traces.iter().map(|t| t.final_delay()).fold(f64::INFINITY, f64::min);
    let has_acc = traces.iter().all(|t| t.rows.iter().all(|r| r.accuracy.is_some()));
    for j in 0..DELAY_GRID_POINTS {
        let delay = t_max * j as f64 / (DELAY_GRID_POINTS - 1) as f64;
        let losses: Vec<f64> =
            traces.iter().map(|t| interpolate(t, delay, |r| r.loss)).collect();
        let grads: Vec<f64> =
            traces.iter().map(|t| interpolate(t, delay, |r| r.grad_sq_norm)).collect();
        let (lm, ls) = mean_std(&losses);
        let (gm, gs) = mean_std(&grads);
        let acc = if has_acc {
            let accs: Vec<f64> = traces
                .iter()
                .map(|t| interpolate(t, delay, |r| r.accuracy.unwrap()))
                .collect();
            let (am, asd) = mean_std(&accs);
            format!("{am},{asd}")
        } else {
            ",".to_string()
        };
        out.push_str(&format!("{delay},{lm},{ls},{gm},{gs},{acc}\n"));
    }
    out
}

fn interpolate(trace: &MetricsTrace, delay: f64, value: impl Fn(&spodgt::diagnostics::TraceRow) -> f64) -> f64 {
    let rows = &trace.rows;
    if rows.is_empty() {
        return f64::NAN;
    }
    if delay <= rows[0].tau_total_cum {
        return value(&rows[0]);
    }
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if delay <= b.tau_total_cum {
            let span = b.tau_total_cum - a.tau_total_cum;
            if span <= 0.0 {
                return value(b);
            }
            let t = (delay - a.tau_total_cum) / span;
            return value(a) + t * (value(b) - value(a));
        }
    }
    value(rows.last().unwrap())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Build graph, mixing, constants and emit the full theory report as JSON.
pub fn cmd_theory(cfg: &RunConfigFile, _ov: &Overrides) -> Result<String, CliError> {
    let out = ensure_out_dir(cfg)?;
    let exp = build_experiment(cfg)?;
    let (_, batch, profile) = resolve_run_parameters(cfg, &exp)?;
    let em = ExpectedMixing::build(&exp.pair, &profile, &exp.metrics)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let streams = RngStreams::new(cfg.master_seed()).child(0x7e01);
    let pc = match &exp.oracle {
        LossOracle::Quadratic { .. } => exact_quadratic_constants(&exp.oracle, &exp.ds),
        _ => estimate_constants(&exp.oracle, &exp.ds, cfg.theory.probe_points, &streams),
    }
    .with_batches(batch);
    let best_loss_seen = match &exp.oracle {
        LossOracle::Quadratic { .. } => quadratic_minimizer(&exp.oracle, &exp.ds).1,
        _ => centralized_reference(&exp.oracle, &exp.ds, 2000).0,
    };
    let report = theory_report(&TheoryContext {
        pair: &exp.pair,
        profile: &profile,
        em: &em,
        metrics: &exp.metrics,
        pc: &pc,
        gamma2: cfg.theory.gamma2,
        gamma3: cfg.theory.gamma3,
        best_loss_seen: Some(best_loss_seen),
    });
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    write_file(&out.join("theory.json"), &json)?;
    Ok(json)
}

/// Run the Monte-Carlo lemma suite plus the expected-matrix check on the
/// configured instance. Returns the report JSON; callers map `all_pass` to
/// the exit code.
pub fn cmd_check(cfg: &RunConfigFile, ov: &Overrides) -> Result<(String, bool), CliError> {
    if cfg.graph.m > 8 {
        return Err(CliError::Config(format!(
            "check requires m <= 8 (Monte-Carlo cost); got m = {}",
            cfg.graph.m
        )));
    }
    if cfg.problem.kind != "quadratic" {
        return Err(CliError::Config(
            "check requires problem.kind = \"quadratic\" (exact analysis constants)".into(),
        ));
    }
    let out = ensure_out_dir(cfg)?;
    let exp = build_experiment(cfg)?;
    let (_, batch, _) = resolve_run_parameters(cfg, &exp)?;
    let eta = vec![cfg.check.eta; exp.g.m()];
    let inst = SuiteInstance::from_parts(
        exp.g,
        exp.pair,
        exp.profile,
        exp.metrics,
        exp.ds,
        exp.oracle,
        batch,
        eta,
        cfg.master_seed(),
    )
    .map_err(CliError::Config)?;
    let trials = ov.trials.unwrap_or(cfg.check.trials);
    let streams = RngStreams::new(cfg.master_seed()).child(0xc4ec);
    let report = lemma_bound_suite(&inst, &inst.constants, trials, &streams);
    let json = serde_json::to_string_pretty(&report).expect("report serialization");
    write_file(&out.join("check.json"), &json)?;
    Ok((json, report.all_pass))
}

/// Re-run the experiment once per axis value and write each point's outputs
/// under its own subdirectory, plus a summary CSV of end-of-run aggregates.
pub fn cmd_sweep(cfg: &RunConfigFile, ov: &Overrides) -> Result<(), CliError> {
    let sweep = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config("sweep requires a [sweep] section".into()))?;
    let out = ensure_out_dir(cfg)?;
    let mut points = Vec::new();
    for (idx, &value) in sweep.values.iter().enumerate() {
        let mut point = cfg.clone();
        point.sweep = None;
        match sweep.axis.as_str() {
            "labels_per_client" => {
                let v = value as usize;
                if v as f64 != value || v == 0 {
                    return Err(CliError::Config(format!(
                        "sweep.values: labels_per_client needs positive integers, got {value}"
                    )));
                }
                point.problem.labels_per_client = v;
            }
            "radius" => point.graph.radius = value,
            "m" => {
                let v = value as usize;
                if v as f64 != value || v == 0 {
                    return Err(CliError::Config(format!(
                        "sweep.values: m needs positive integers, got {value}"
                    )));
                }
                point.graph.m = v;
            }
            "eta" => point.run.eta = crate::config::PerClient::Scalar(value),
            _ => unreachable!("validated"),
        }
        let sub = out.join(format!("sweep_{}_{idx}", sweep.axis));
        point.out_dir = Some(sub.to_string_lossy().into_owned());
        points.push((idx, value, point, sub));
    }
    // points run concurrently alongside their repeats; summary rows are
    // reassembled in axis order afterwards
    let results: Vec<Result<(usize, String), CliError>> = install_pool(ov.jobs, || {
        points
            .par_iter()
            .map(|(idx, value, point, sub)| {
                let exp = build_experiment(point)?;
                let traces = execute_variants(point, &exp, None)?;
                std::fs::create_dir_all(sub)?;
                for ((variant, repeat), trace) in &traces {
                    write_file(&sub.join(format!("trace_{variant}_r{repeat}.csv")), &trace.to_csv())?;
                }
                let mut rows = String::new();
                for variant in &point.run.variants {
                    let group: Vec<&MetricsTrace> =
                        traces.iter().filter(|((v, _), _)| v == variant).map(|(_, t)| t).collect();
                    write_file(&sub.join(format!("aggregate_{variant}.csv")), &aggregate_csv(&group))?;
                    // end-of-run row: mean of each repeat's final logged metrics
                    let losses: Vec<f64> = group.iter().map(|t| t.rows.last().unwrap().loss).collect();
                    let grads: Vec<f64> =
                        group.iter().map(|t| t.rows.last().unwrap().grad_sq_norm).collect();
                    let (lm, _) = mean_std(&losses);
                    let (gm, _) = mean_std(&grads);
                    let acc = {
                        let accs: Vec<f64> = group
                            .iter()
                            .filter_map(|t| t.rows.last().unwrap().accuracy)
                            .collect();
                        if accs.len() == group.len() {
                            mean_std(&accs).0.to_string()
                        } else {
                            String::new()
                        }
                    };
                    rows.push_str(&format!("{},{value},{variant},{lm},{gm},{acc}\n", sweep.axis));
                }
                Ok((*idx, rows))
            })
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    rows.sort_by_key(|(idx, _)| *idx);
    let mut summary = String::from("axis,value,variant,loss_mean,grad_sq_norm_mean,accuracy_mean\n");
    for (_, r) in rows {
        summary.push_str(&r);
    }
    write_file(&out.join("sweep_summary.csv"), &summary)?;
    Ok(())
}
