use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{check_compatible, Checkpoint, MetricsRow};
use crate::baselines::{solve, Baseline, SolverConfig};
use crate::chansim::{ScenarioConfig, ScenarioInstance};
use crate::engnn::{infer, EngnnParams};
use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::objectives::{constraint_residual, evaluate as rate_of};

/// Per-sample results; columns of a method that was not run stay empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub sample: u64,
    pub engnn_sum_rate: Option<f64>,
    pub engnn_residual: Option<f64>,
    pub baseline: Option<&'static str>,
    pub baseline_sum_rate: Option<f64>,
    pub baseline_residual: Option<f64>,
    pub baseline_iterations: Option<usize>,
    pub baseline_converged: Option<bool>,
}

pub const SAMPLES_HEADER: [&str; 8] = [
    "sample",
    "engnn_sum_rate",
    "engnn_residual",
    "baseline",
    "baseline_sum_rate",
    "baseline_residual",
    "baseline_iterations",
    "baseline_converged",
];

#[derive(Debug, Clone)]
pub struct EvalResult {
    /// Learned-model summary (`epoch` holds the checkpoint's epoch count).
    pub row: MetricsRow,
    pub samples: Vec<SampleRow>,
    pub baseline_mean: Option<f64>,
    pub baseline_residual_max: Option<f64>,
    /// Mean wall time per instance, seconds.
    pub engnn_seconds: f64,
    pub baseline_seconds: Option<f64>,
}

fn test_set(scenario: &ScenarioConfig, n: usize, seed: u64) -> Result<Vec<(ScenarioInstance, HetGraph)>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let inst = scenario.generate(seed, i)?;
            let g = inst.graph()?;
            Ok((inst, g))
        })
        .collect()
}

/// Evaluates a checkpoint on `n_samples` instances drawn from `(scenario, seed)`.
pub fn evaluate(
    ck: &Checkpoint,
    scenario: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
    baseline: Option<(Baseline, &SolverConfig)>,
) -> Result<EvalResult> {
    if n_samples == 0 {
        return Err(Error::Config("at least one evaluation sample is required".into()));
    }
    scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
    check_compatible(&ck.params.config, scenario)?;
    let data = test_set(scenario, n_samples, seed)?;
    let mut res = evaluate_instances(&ck.params, &data, baseline)?;
    res.row.run_id = format!("{}-eval-seed{seed}", scenario.kind.name());
    res.row.epoch = ck.epochs_done;
    Ok(res)
}

struct One {
    rate: f64,
    residual: f64,
    seconds: f64,
}

/// Learned (and optionally baseline) results on given instances.
pub fn evaluate_instances(
    params: &EngnnParams,
    data: &[(ScenarioInstance, HetGraph)],
    baseline: Option<(Baseline, &SolverConfig)>,
) -> Result<EvalResult> {
    let start = Instant::now();
    let learned: Vec<One> = data
        .par_iter()
        .map(|(inst, g)| {
            let t = Instant::now();
            let s = infer(params, inst, g)?;
            let seconds = t.elapsed().as_secs_f64();
            Ok(One {
                rate: rate_of(inst, &s)?.sum_rate,
                residual: constraint_residual(inst, &s)?,
                seconds,
            })
        })
        .collect::<Result<_>>()?;
    let wall = start.elapsed().as_secs_f64();
    let base = baseline.map(|(b, cfg)| solve_all(b, cfg, data)).transpose()?;
    let n = data.len() as f64;
    let samples: Vec<SampleRow> = learned
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let b = base.as_ref().map(|(b, rows)| (*b, &rows[i]));
            SampleRow {
                sample: i as u64,
                engnn_sum_rate: Some(l.rate),
                engnn_residual: Some(l.residual),
                baseline: b.map(|(b, _)| b.name()),
                baseline_sum_rate: b.map(|(_, r)| r.0.rate),
                baseline_residual: b.map(|(_, r)| r.0.residual),
                baseline_iterations: b.map(|(_, r)| r.1),
                baseline_converged: b.map(|(_, r)| r.2),
            }
        })
        .collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>| xs.sum::<f64>() / n;
    let worst = |xs: &mut dyn Iterator<Item = f64>| xs.fold(0.0f64, f64::max);
    Ok(EvalResult {
        row: MetricsRow {
            run_id: String::new(),
            epoch: 0,
            mean_sum_rate: mean(&mut learned.iter().map(|l| l.rate)),
            residual_max: worst(&mut learned.iter().map(|l| l.residual)),
            seconds: wall,
        },
        engnn_seconds: mean(&mut learned.iter().map(|l| l.seconds)),
        baseline_mean: base.as_ref().map(|(_, r)| mean(&mut r.iter().map(|x| x.0.rate))),
        baseline_residual_max: base.as_ref().map(|(_, r)| worst(&mut r.iter().map(|x| x.0.residual))),
        baseline_seconds: base.as_ref().map(|(_, r)| mean(&mut r.iter().map(|x| x.0.seconds))),
        samples,
    })
}

type BaseRows = (Baseline, Vec<(One, usize, bool)>);

fn solve_all(b: Baseline, cfg: &SolverConfig, data: &[(ScenarioInstance, HetGraph)]) -> Result<BaseRows> {
    let rows = data
        .par_iter()
        .map(|(inst, _)| {
            let t = Instant::now();
            let out = solve(b, inst, cfg)?;
            let seconds = t.elapsed().as_secs_f64();
            let one = One {
                rate: out.report.sum_rate,
                residual: constraint_residual(inst, &out.solution)?,
                seconds,
            };
            Ok((one, out.iterations(), out.converged))
        })
        .collect::<Result<_>>()?;
    Ok((b, rows))
}

/// Baseline-only results on `(scenario, seed)`.
pub fn run_baseline(
    scenario: &ScenarioConfig,
    n_samples: usize,
    seed: u64,
    b: Baseline,
    cfg: &SolverConfig,
) -> Result<Vec<SampleRow>> {
    scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
    run_baseline_instances(&test_set(scenario, n_samples, seed)?, b, cfg)
}

/// Baseline-only results on given instances.
pub fn run_baseline_instances(
    data: &[(ScenarioInstance, HetGraph)],
    b: Baseline,
    cfg: &SolverConfig,
) -> Result<Vec<SampleRow>> {
    let (_, rows) = solve_all(b, cfg, data)?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (one, iters, conv))| SampleRow {
            sample: i as u64,
            engnn_sum_rate: None,
            engnn_residual: None,
            baseline: Some(b.name()),
            baseline_sum_rate: Some(one.rate),
            baseline_residual: Some(one.residual),
            baseline_iterations: Some(iters),
            baseline_converged: Some(conv),
        })
        .collect())
}

/// Writes per-sample rows; every column is deterministic given the inputs.
pub fn write_samples_csv<W: std::io::Write>(w: W, rows: &[SampleRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(SAMPLES_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
