use rayon::prelude::*;
use serde::Serialize;

use super::{
    derive_seed, initial_guess, make_instance, mark_failed, solve_into_row, solver_rank,
    stream_seed, ExperimentConfig, ResultRow, Stream, SCHEMA_VERSION,
};
use crate::diagnostics::estimate_local_rip;
use crate::error::Result;
use crate::solvers::SolverVariant;

/// One line of `traces.csv`: a per-trial iteration (`row_kind =
/// iteration`), or the mean / standard deviation over the `count` trials
/// that reached that iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub schema_version: u32,
    pub n: usize,
    pub r: usize,
    pub q: f64,
    pub m: usize,
    pub solver: SolverVariant,
    pub row_kind: &'static str,
    pub trial: Option<usize>,
    pub iteration: usize,
    pub rel_residual: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub restarted: Option<bool>,
    pub count: Option<usize>,
    pub wall_time: Option<f64>,
}

/// RGrad stepsize against the tangent isometry estimate at the iterate the
/// step started from. The bracket applies when `rip < 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BracketRecord {
    pub q: f64,
    pub trial: usize,
    pub iteration: usize,
    pub alpha_p: f64,
    pub rip: f64,
    pub rip_converged: bool,
    pub applicable: bool,
    pub holds: bool,
}

impl BracketRecord {
    fn new(q: f64, trial: usize, iteration: usize, alpha_p: f64, rip: f64, converged: bool) -> Self {
        let applicable = rip < 1.0;
        let holds = !applicable || (alpha_p >= 1.0 / (1.0 + rip) && alpha_p <= 1.0 / (1.0 - rip));
        BracketRecord {
            q,
            trial,
            iteration,
            alpha_p,
            rip,
            rip_converged: converged,
            applicable,
            holds,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ConvergenceOutput {
    pub rows: Vec<ResultRow>,
    pub traces: Vec<TraceRow>,
    pub bracket: Vec<BracketRecord>,
}

type Key = (usize, usize, usize);

/// Every configured solver on the same instances and initial guesses, for
/// each oversampling ratio; `m = round((2n - r) r / q)`.
pub fn run_convergence(config: &ExperimentConfig) -> Result<ConvergenceOutput> {
    config.validate()?;
    let n = config.n;
    let r = config.r.expect("validated");
    let dof = ((2 * n - r) * r) as f64;
    let q_grid = config.q_grid();
    let mut jobs = Vec::new();
    for (qi, &q) in q_grid.iter().enumerate() {
        for trial in 0..config.trials {
            jobs.push((qi, q, trial));
        }
    }
    let results: Vec<(Key, ResultRow, Vec<TraceRow>, Vec<BracketRecord>)> = jobs
        .into_par_iter()
        .flat_map_iter(|(qi, q, trial)| {
            let seed = derive_seed(config.master_seed, &[q], trial);
            let m = ((dof / q).round() as usize).clamp(1, n * n);
            let check_bracket = config.bracket_stride > 0 && trial < config.bracket_trials;
            let setup = make_instance(n, r, m, config.sampling, seed).and_then(|inst| {
                let x0 = initial_guess(config, &inst, &inst.data, r, seed)?;
                Ok((inst, x0))
            });
            let mut out = Vec::new();
            for &solver in &config.solvers {
                let mut row = ResultRow::blank(config, trial, seed, solver);
                row.r = Some(r);
                row.p = m as f64 / (n * n) as f64;
                row.q = q;
                row.m = Some(m);
                let trace_row = |iteration: usize, rel_residual: f64| TraceRow {
                    schema_version: SCHEMA_VERSION,
                    n,
                    r,
                    q,
                    m,
                    solver,
                    row_kind: "iteration",
                    trial: Some(trial),
                    iteration,
                    rel_residual,
                    alpha: None,
                    beta: None,
                    restarted: None,
                    count: None,
                    wall_time: None,
                };
                let mut traces = Vec::new();
                let mut bracket = Vec::new();
                match &setup {
                    Ok((inst, x0)) => {
                        let p = inst.data.sampling().p();
                        let rip_seed = stream_seed(seed, Stream::Diagnostics);
                        let watch = check_bracket && solver == SolverVariant::Rgrad;
                        let sol = solve_into_row(config, inst, &inst.data, x0, &mut row, |x_l, rec| {
                            if watch && (rec.iteration - 1) % config.bracket_stride == 0 {
                                // a failed estimate leaves the iterate unchecked
                                if let Ok(est) = estimate_local_rip(x_l, inst.data.sampling(), rip_seed) {
                                    bracket.push(BracketRecord::new(
                                        q,
                                        trial,
                                        rec.iteration,
                                        rec.alpha * p,
                                        est.value,
                                        est.converged,
                                    ));
                                }
                            }
                        });
                        if let Some(sol) = sol {
                            traces.push(trace_row(0, sol.trace.initial_residual));
                            for rec in &sol.trace.records {
                                traces.push(TraceRow {
                                    alpha: Some(rec.alpha),
                                    beta: Some(rec.beta),
                                    restarted: Some(rec.restarted),
                                    wall_time: Some(rec.wall_time),
                                    ..trace_row(rec.iteration, rec.rel_residual)
                                });
                            }
                        }
                    }
                    Err(e) => mark_failed(&mut row, e),
                }
                out.push(((qi, solver_rank(config, solver), trial), row, traces, bracket));
            }
            out
        })
        .collect();

    let mut results = results;
    results.sort_by_key(|(k, ..)| *k);
    let mut output = ConvergenceOutput::default();
    let mut group: Vec<TraceRow> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for ((qi, si, _), row, traces, bracket) in results {
        if current != Some((qi, si)) {
            flush_summary(&mut output.traces, &mut group);
            current = Some((qi, si));
        }
        output.rows.push(row);
        group.extend(traces);
        output.bracket.extend(bracket);
    }
    flush_summary(&mut output.traces, &mut group);
    Ok(output)
}

/// Appends the per-trial rows of one (ratio, solver) group followed by its
/// mean and standard deviation rows.
fn flush_summary(out: &mut Vec<TraceRow>, group: &mut Vec<TraceRow>) {
    let Some(first) = group.first().cloned() else {
        return;
    };
    let len = group.iter().map(|t| t.iteration + 1).max().unwrap_or(0);
    let mut summary = Vec::with_capacity(2 * len);
    for k in 0..len {
        let vals: Vec<f64> = group
            .iter()
            .filter(|t| t.iteration == k)
            .map(|t| t.rel_residual)
            .collect();
        let count = vals.len();
        let mean = vals.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let base = TraceRow {
            trial: None,
            iteration: k,
            count: Some(count),
            alpha: None,
            beta: None,
            restarted: None,
            wall_time: None,
            ..first.clone()
        };
        summary.push(TraceRow {
            row_kind: "mean",
            rel_residual: mean,
            ..base.clone()
        });
        summary.push(TraceRow {
            row_kind: "stddev",
            rel_residual: var.sqrt(),
            ..base
        });
    }
    out.append(group);
    out.extend(summary);
}
