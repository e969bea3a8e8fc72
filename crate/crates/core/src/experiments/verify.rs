use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{derive_seed, stream_seed, ExperimentConfig, Stream};
use crate::diagnostics::{
    check_projection_bounds, check_recursion, check_trimmed_incoherence, convergence_constants,
    estimate_asymmetric_rip, estimate_local_rip, procrustes_align, ConvergenceConstants, BETA_LOG,
};
use crate::error::Result;
use crate::init::trim;
use crate::linalg::{gaussian_matrix, hard_threshold, random_lowrank, random_orthonormal, thin_qr, LowRankMatrix};
use crate::sampling::{mu0_of, sample_uniform, SamplingMode};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SectionSummary {
    pub section: &'static str,
    pub instances: usize,
    /// Instances whose check failed.
    pub failures: usize,
    /// Failures counted against the run; the RIP sections tolerate a
    /// configured fraction of failing seeds.
    pub violations: usize,
    pub wall_time: f64,
}

/// A failed check with everything needed to rebuild the instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub section: &'static str,
    pub instance: usize,
    pub seed: u64,
    pub detail: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub master_seed: u64,
    pub sections: Vec<SectionSummary>,
    pub constants: Vec<ConvergenceConstants>,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn total_violations(&self) -> usize {
        self.sections.iter().map(|s| s.violations).sum()
    }

    pub fn section(&self, name: &str) -> Option<&SectionSummary> {
        self.sections.iter().find(|s| s.section == name)
    }
}

fn matrix_json(a: &DMatrix<f64>) -> Value {
    json!({ "rows": a.nrows(), "cols": a.ncols(), "column_major": a.as_slice() })
}

fn lowrank_json(x: &LowRankMatrix) -> Value {
    json!({ "u": matrix_json(x.u()), "sigma": x.sigma().as_slice(), "v": matrix_json(x.v()) })
}

fn section_seed(config: &ExperimentConfig, section: usize, i: usize) -> u64 {
    derive_seed(config.master_seed, &[section as f64], i)
}

type Outcome = (usize, u64, Option<Value>);

/// Runs `check` on instances `0..count` in parallel; `check` returns
/// `Some(detail)` for a failed instance.
fn sweep(
    config: &ExperimentConfig,
    section: usize,
    count: usize,
    check: impl Fn(usize, u64) -> Option<Value> + Sync,
) -> Vec<Outcome> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = section_seed(config, section, i);
            (i, seed, check(i, seed))
        })
        .collect()
}

fn summarize(
    name: &'static str,
    outcomes: Vec<Outcome>,
    allowed_failures: usize,
    started: Instant,
    report: &mut VerifyReport,
) {
    let instances = outcomes.len();
    let failed: Vec<Violation> = outcomes
        .into_iter()
        .filter_map(|(instance, seed, detail)| {
            detail.map(|detail| Violation {
                section: name,
                instance,
                seed,
                detail,
            })
        })
        .collect();
    let failures = failed.len();
    let violations = if failures > allowed_failures { failures } else { 0 };
    if violations > 0 {
        report.violations.extend(failed);
    }
    report.sections.push(SectionSummary {
        section: name,
        instances,
        failures,
        violations,
        wall_time: started.elapsed().as_secs_f64(),
    });
}

fn projection_instance(seed: u64) -> Result<(LowRankMatrix, LowRankMatrix, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(1..=4);
    let n = rng.random_range((2 * r).max(4)..=40);
    let x = random_lowrank(n, r, stream_seed(seed, Stream::Truth))?;
    // perturbation sizes from 1e-6 to 10 times sigma_min; the top decade
    // gives essentially unrelated pairs
    let level = 10f64.powf(rng.random_range(-6.0..1.0)) * x.sigma()[r - 1];
    let e = gaussian_matrix(n, n, &mut rng);
    let x_l = hard_threshold(&(x.to_dense() + e * (level / (n as f64))), r)?;
    Ok((x_l, x, level))
}

fn procrustes_instance(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(1..=5);
    let n = rng.random_range(r..=50);
    let u = random_orthonormal(n, r, &mut rng);
    let u_l = if rng.random_bool(0.5) {
        random_orthonormal(n, r, &mut rng)
    } else {
        let level = 10f64.powf(rng.random_range(-6.0..0.0));
        let g = gaussian_matrix(n, r, &mut rng);
        thin_qr(&(&u + g * level)).expect("n >= r").0
    };
    (u_l, u)
}

fn recursion_draw(seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let rho1: f64 = rng.random_range(0.01..0.6);
        let rho2 = rho1 * (1.0 + rng.random_range(0.0..2.0));
        let gamma: f64 = rng.random_range(0.0..0.5);
        if rho1 + gamma + (rho2 - rho1) * gamma < 1.0 {
            return (rho1, rho2, gamma);
        }
    }
}

/// Rank-2, perfectly conditioned ground truth and a rank-2 neighbour within
/// `sigma_min / (10 sqrt 2)` that piles extra weight on the most coherent row.
fn adversarial_trim_pair(seed: u64) -> Result<(LowRankMatrix, LowRankMatrix)> {
    let (n, r) = (200, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_orthonormal(n, r, &mut rng);
    let v = random_orthonormal(n, r, &mut rng);
    let x = LowRankMatrix::new(u.clone(), nalgebra::DVector::from_element(r, 1.0), v.clone())?;
    let top = (0..n)
        .max_by(|&a, &b| u.row(a).norm().total_cmp(&u.row(b).norm()))
        .expect("n > 0");
    let dir = u.row(top).transpose() / u.row(top).norm();
    let delta = 0.999 / (10.0 * 2f64.sqrt());
    let mut z = x.to_dense();
    let bump = (&v * dir).transpose() * delta;
    let mut row = z.row_mut(top);
    row += bump;
    Ok((x, hard_threshold(&z, r)?))
}

fn random_trim_pair(seed: u64) -> Result<(LowRankMatrix, LowRankMatrix)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(1..=3);
    let n = rng.random_range(20..=100);
    let x = random_lowrank(n, r, stream_seed(seed, Stream::Truth))?;
    let radius = x.sigma()[r - 1] / (10.0 * 2f64.sqrt());
    let e = gaussian_matrix(n, n, &mut rng);
    let e = &e * (0.45 * radius / e.norm());
    Ok((x.clone(), hard_threshold(&(x.to_dense() + e), r)?))
}

/// Runs every diagnostics sweep and collects failures.
///
/// Instance 0 of the trim section is an adversarial neighbour that only
/// passes because trimming caps its rows; `trim_cap_ignored` hands the
/// untrimmed neighbour to the check instead.
pub fn run_verify(config: &ExperimentConfig) -> Result<VerifyReport> {
    config.validate()?;
    let mut report = VerifyReport {
        master_seed: config.master_seed,
        sections: Vec::new(),
        constants: Vec::new(),
        violations: Vec::new(),
    };

    let started = Instant::now();
    let outcomes = sweep(config, 1, config.projection_instances, |_, seed| {
        match projection_instance(seed).and_then(|(x_l, x, level)| {
            let rep = check_projection_bounds(&x_l, &x)?;
            Ok((rep.violations() > 0).then(|| {
                json!({
                    "perturbation": level,
                    "report": rep,
                    "x_l": lowrank_json(&x_l),
                    "x": lowrank_json(&x),
                })
            }))
        }) {
            Ok(v) => v,
            Err(e) => Some(json!({ "error": e.to_string() })),
        }
    });
    summarize("projection_bounds", outcomes, 0, started, &mut report);

    let started = Instant::now();
    let outcomes = sweep(config, 2, config.procrustes_pairs, |_, seed| {
        let (u_l, u) = procrustes_instance(seed);
        match procrustes_align(&u_l, &u) {
            Ok(rep) if rep.holds => None,
            Ok(rep) => Some(json!({
                "chordal": rep.chordal,
                "projector_dist": rep.projector_dist,
                "u_l": matrix_json(&u_l),
                "u": matrix_json(&u),
            })),
            Err(e) => Some(json!({ "error": e.to_string() })),
        }
    });
    summarize("procrustes", outcomes, 0, started, &mut report);

    let horizon = config.recursion_horizon;
    let started = Instant::now();
    let outcomes = sweep(config, 3, config.recursion_draws, |_, seed| {
        let (rho1, rho2, gamma) = recursion_draw(seed);
        match check_recursion(rho1, rho2, gamma, 1.0, horizon) {
            Ok(rep) if rep.violations == 0 => None,
            Ok(rep) => Some(json!({
                "rho1": rho1, "rho2": rho2, "gamma": gamma, "horizon": horizon,
                "max_ratio": rep.max_ratio,
            })),
            Err(e) => Some(json!({ "rho1": rho1, "rho2": rho2, "gamma": gamma, "error": e.to_string() })),
        }
    });
    summarize("recursion", outcomes, 0, started, &mut report);

    let (n, r) = (config.rip_n, config.rip_r);
    let m = (config.rip_samples_factor * (n * r) as f64 * (n as f64).ln()).round() as usize;
    let allowed = config.rip_seeds
        - (config.rip_pass_fraction * config.rip_seeds as f64).ceil() as usize;
    let rip_case = |seed: u64| -> Result<_> {
        let x = random_lowrank(n, r, stream_seed(seed, Stream::Truth))?;
        let s = sample_uniform(n, n, m, SamplingMode::WithReplacement, stream_seed(seed, Stream::Sampling))?;
        Ok((x, s))
    };
    let started = Instant::now();
    let outcomes = sweep(config, 4, config.rip_seeds, |_, seed| {
        match rip_case(seed).and_then(|(x, s)| estimate_local_rip(&x, &s, stream_seed(seed, Stream::Diagnostics))) {
            Ok(est) if est.value <= est.theoretical_bound => None,
            Ok(est) => Some(json!({ "n": n, "r": r, "m": m, "beta": BETA_LOG, "estimate": est })),
            Err(e) => Some(json!({ "error": e.to_string() })),
        }
    });
    summarize("local_rip", outcomes, allowed, started, &mut report);

    let started = Instant::now();
    let outcomes = sweep(config, 5, config.rip_seeds, |_, seed| {
        let run = rip_case(seed).and_then(|(x, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, Stream::Noise));
            let e = gaussian_matrix(n, n, &mut rng);
            let level = 0.1 * x.sigma()[r - 1] / e.norm();
            let x_l = hard_threshold(&(x.to_dense() + e * level), r)?;
            estimate_asymmetric_rip(&x_l, &x, &s, stream_seed(seed, Stream::Diagnostics))
        });
        match run {
            Ok(est) if est.value <= est.theoretical_bound => None,
            Ok(est) => Some(json!({ "n": n, "r": r, "m": m, "beta": BETA_LOG, "estimate": est })),
            Err(e) => Some(json!({ "error": e.to_string() })),
        }
    });
    summarize("asymmetric_rip", outcomes, allowed, started, &mut report);

    let cap_ignored = config.trim_cap_ignored;
    let started = Instant::now();
    let outcomes = sweep(config, 6, config.trim_instances, |i, seed| {
        let pair = if i == 0 { adversarial_trim_pair(seed) } else { random_trim_pair(seed) };
        let run = pair.and_then(|(x, z)| {
            let cap = mu0_of(&x);
            let checked = if cap_ignored { z.clone() } else { trim(&z, cap)? };
            let check = check_trimmed_incoherence(&checked, cap);
            Ok((!check.holds).then(|| {
                json!({
                    "adversarial": i == 0,
                    "cap_ignored": cap_ignored,
                    "mu0_cap": cap,
                    "check": check,
                    "x": lowrank_json(&x),
                    "z": lowrank_json(&z),
                })
            }))
        });
        run.unwrap_or_else(|e| Some(json!({ "error": e.to_string() })))
    });
    summarize("trimmed_incoherence", outcomes, 0, started, &mut report);

    let started = Instant::now();
    let mut outcomes = Vec::new();
    for (i, &eps0) in config.constants_epsilon0.iter().enumerate() {
        let detail = match (
            convergence_constants(eps0, config.kappa1, config.kappa2, BETA_LOG),
            convergence_constants(eps0, 0.0, 0.0, BETA_LOG),
        ) {
            (Ok(c), Ok(plain)) => {
                report.constants.push(c);
                // the sufficient condition only promises a contraction up to 0.01
                let contracts = eps0 > 0.01 || (c.tau_sum_below_one && c.nu_cg_below_one);
                let reduces = plain.nu_cg == plain.nu_g;
                (!(contracts && reduces)).then(|| {
                    json!({ "constants": c, "without_restart_terms": plain })
                })
            }
            (Err(e), _) | (_, Err(e)) => Some(json!({ "epsilon0": eps0, "error": e.to_string() })),
        };
        outcomes.push((i, config.master_seed, detail));
    }
    summarize("constants", outcomes, 0, started, &mut report);

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_neighbour_is_close_and_coherent() {
        let (x, z) = adversarial_trim_pair(11).unwrap();
        assert!(x.distance(&z) <= 1.0 / (10.0 * 2f64.sqrt()));
        let cap = mu0_of(&x);
        assert!(!check_trimmed_incoherence(&z, cap).holds);
        assert!(check_trimmed_incoherence(&trim(&z, cap).unwrap(), cap).holds);
    }
}
