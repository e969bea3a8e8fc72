use rayon::prelude::*;

use super::{
    derive_seed, initial_guess, make_instance, mark_failed, rank_for_budget, solve_into_row,
    solver_rank, ExperimentConfig, ResultRow,
};
use crate::error::Result;

/// Phase-transition grid over `(p, q)`.
///
/// Each cell samples `m = round(p n^2)` entries and takes the largest `r`
/// with `(2n - r) r <= q m`; cells where not even `r = 1` fits are written
/// as `skipped` rows. All solvers of a trial share the instance and the
/// initial guess.
pub fn run_phase(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let n = config.n;
    let cells = n * n;
    let mut jobs = Vec::new();
    for (pi, &p) in config.p.iter().enumerate() {
        for (qi, &q) in config.q_grid().iter().enumerate() {
            for trial in 0..config.trials {
                jobs.push((pi, qi, p, q, trial));
            }
        }
    }
    let mut keyed: Vec<((usize, usize, usize, usize), ResultRow)> = jobs
        .into_par_iter()
        .flat_map_iter(|(pi, qi, p, q, trial)| {
            let seed = derive_seed(config.master_seed, &[p, q], trial);
            let m = ((p * cells as f64).round() as usize).clamp(1, cells);
            let r = rank_for_budget(n, q * m as f64);
            let rows: Vec<ResultRow> = config
                .solvers
                .iter()
                .map(|&solver| {
                    let mut row = ResultRow::blank(config, trial, seed, solver);
                    row.p = p;
                    row.q = q;
                    row.m = Some(m);
                    if r == 0 {
                        row.status = "skipped".into();
                    } else {
                        row.r = Some(r);
                    }
                    row
                })
                .collect();
            let rows = if r == 0 { rows } else { solve_cell(config, rows, n, r, m, seed) };
            rows.into_iter()
                .map(move |row| ((pi, qi, trial, solver_rank(config, row.solver)), row))
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, row)| row).collect())
}

fn solve_cell(
    config: &ExperimentConfig,
    mut rows: Vec<ResultRow>,
    n: usize,
    r: usize,
    m: usize,
    seed: u64,
) -> Vec<ResultRow> {
    let setup = make_instance(n, r, m, config.sampling, seed).and_then(|inst| {
        let x0 = initial_guess(config, &inst, &inst.data, r, seed)?;
        Ok((inst, x0))
    });
    match setup {
        Ok((inst, x0)) => {
            for row in &mut rows {
                solve_into_row(config, &inst, &inst.data, &x0, row, |_, _| {});
            }
        }
        Err(e) => rows.iter_mut().for_each(|row| mark_failed(row, &e)),
    }
    rows
}
