use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{
    derive_seed, initial_guess, make_instance, mark_failed, solve_into_row, solver_rank,
    stream_seed, ExperimentConfig, ResultRow, Stream,
};
use crate::error::Result;
use crate::sampling::ObservedData;

/// Observed values corrupted by `e = sigma ||P_Omega(X)||_F w / ||w||` with
/// `w` standard Gaussian over the observed locations.
pub(crate) fn add_noise(data: &ObservedData, sigma: f64, seed: u64) -> Result<ObservedData> {
    if sigma == 0.0 {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..data.values().len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let w_norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = sigma * data.observed_norm() / w_norm;
    let values = data
        .values()
        .iter()
        .zip(&w)
        .map(|(v, e)| v + scale * e)
        .collect();
    data.with_values(values)
}

/// Noise sweep over `(q, sigma)` at fixed `n` and `r`, with
/// `m = round((2n - r) r / q)`. The solver sees the noisy values; the
/// relative error is measured against the clean ground truth.
pub fn run_noise(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let n = config.n;
    let r = config.r.expect("validated");
    let dof = ((2 * n - r) * r) as f64;
    let mut jobs = Vec::new();
    for (qi, &q) in config.q_grid().iter().enumerate() {
        for (si, &sigma) in config.sigma.iter().enumerate() {
            for trial in 0..config.trials {
                jobs.push((qi, si, q, sigma, trial));
            }
        }
    }
    let mut keyed: Vec<((usize, usize, usize, usize), ResultRow)> = jobs
        .into_par_iter()
        .flat_map_iter(|(qi, si, q, sigma, trial)| {
            let seed = derive_seed(config.master_seed, &[q, sigma], trial);
            let m = ((dof / q).round() as usize).clamp(1, n * n);
            let mut rows: Vec<ResultRow> = config
                .solvers
                .iter()
                .map(|&solver| {
                    let mut row = ResultRow::blank(config, trial, seed, solver);
                    row.r = Some(r);
                    row.p = m as f64 / (n * n) as f64;
                    row.q = q;
                    row.m = Some(m);
                    row.sigma = Some(sigma);
                    row.snr_db = (sigma > 0.0).then(|| -20.0 * sigma.log10());
                    row
                })
                .collect();
            let setup = make_instance(n, r, m, config.sampling, seed).and_then(|inst| {
                let noisy = add_noise(&inst.data, sigma, stream_seed(seed, Stream::Noise))?;
                let x0 = initial_guess(config, &inst, &noisy, r, seed)?;
                Ok((inst, noisy, x0))
            });
            match setup {
                Ok((inst, noisy, x0)) => {
                    for row in &mut rows {
                        solve_into_row(config, &inst, &noisy, &x0, row, |_, _| {});
                    }
                }
                Err(e) => rows.iter_mut().for_each(|row| mark_failed(row, &e)),
            }
            rows.into_iter()
                .map(move |row| ((qi, si, trial, solver_rank(config, row.solver)), row))
        })
        .collect();
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, row)| row).collect())
}
