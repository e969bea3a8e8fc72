//! Seeded experiment harness: phase transition, convergence traces, noise
//! scaling and the diagnostics sweeps, with CSV and JSON outputs.
//!
//! Every trial draws its randomness from a trial seed
//! `derive_seed(master_seed, grid point, trial)`. The ground truth, the
//! sampling set, the noise and the initialization each use their own stream
//! split off the trial seed, so a row can be replayed from its `seed` column.

mod config;
mod convergence;
mod noise;
mod output;
mod phase;
mod verify;

use std::time::Instant;

pub use config::{rank_for_budget, ExperimentConfig, ExperimentKind};
pub use convergence::{run_convergence, BracketRecord, ConvergenceOutput, TraceRow};
pub use noise::run_noise;
pub use output::{write_outputs, RunOutput, SCHEMA_VERSION};
pub use phase::run_phase;
pub use verify::{run_verify, SectionSummary, VerifyReport, Violation};

use serde::Serialize;

use crate::error::Result;
use crate::init::{initialize, InitScheme};
use crate::linalg::{random_lowrank, LowRankMatrix};
use crate::sampling::{incoherence_report, sample_uniform, ObservedData, SamplingMode};
use crate::solvers::{solve_observed, Solution, SolverVariant, StepRecord};

/// Random streams split off a trial seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Truth = 1,
    Sampling = 2,
    Noise = 3,
    Init = 4,
    Diagnostics = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 chained over the master seed, the grid coordinates (as `f64`
/// bit patterns) and the trial index.
pub fn derive_seed(master: u64, coords: &[f64], trial: usize) -> u64 {
    let mut h = splitmix64(master);
    for c in coords {
        h = splitmix64(h ^ c.to_bits());
    }
    splitmix64(h ^ trial as u64)
}

pub fn stream_seed(trial_seed: u64, stream: Stream) -> u64 {
    splitmix64(trial_seed ^ (stream as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

/// One CSV row: the coordinates of a (grid point, trial, solver) triple and
/// what the solver achieved. Fields that do not apply are left empty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    pub n: usize,
    pub r: Option<usize>,
    pub p: f64,
    pub q: f64,
    pub m: Option<usize>,
    pub sigma: Option<f64>,
    pub sampling: SamplingMode,
    pub init: InitScheme,
    pub trial: usize,
    pub seed: u64,
    pub solver: SolverVariant,
    /// Solver status, `skipped` for infeasible cells or `failed` when the
    /// instance could not be set up.
    pub status: String,
    pub success: Option<bool>,
    pub rel_error: Option<f64>,
    pub rel_residual: Option<f64>,
    pub iterations: Option<usize>,
    pub restarts: Option<usize>,
    pub wall_time: Option<f64>,
    pub mu0: Option<f64>,
    pub mu1: Option<f64>,
    pub kappa: Option<f64>,
    pub snr_db: Option<f64>,
    pub error: Option<String>,
}

impl ResultRow {
    fn blank(config: &ExperimentConfig, trial: usize, seed: u64, solver: SolverVariant) -> Self {
        ResultRow {
            schema_version: SCHEMA_VERSION,
            experiment: config.experiment,
            n: config.n,
            r: None,
            p: f64::NAN,
            q: f64::NAN,
            m: None,
            sigma: None,
            sampling: config.sampling,
            init: config.init,
            trial,
            seed,
            solver,
            status: String::new(),
            success: None,
            rel_error: None,
            rel_residual: None,
            iterations: None,
            restarts: None,
            wall_time: None,
            mu0: None,
            mu1: None,
            kappa: None,
            snr_db: None,
            error: None,
        }
    }
}

/// A ground truth with its clean observations.
pub(crate) struct Instance {
    pub x: LowRankMatrix,
    pub data: ObservedData,
    pub mu0: f64,
    pub mu1: f64,
    pub kappa: f64,
}

pub(crate) fn make_instance(
    n: usize,
    r: usize,
    m: usize,
    mode: SamplingMode,
    trial_seed: u64,
) -> Result<Instance> {
    let x = random_lowrank(n, r, stream_seed(trial_seed, Stream::Truth))?;
    let s = sample_uniform(n, n, m, mode, stream_seed(trial_seed, Stream::Sampling))?;
    let inc = incoherence_report(&x, &s)?;
    let data = ObservedData::from_matrix(s, &x)?;
    let kappa = x.sigma()[0] / x.sigma()[r - 1];
    Ok(Instance {
        x,
        data,
        mu0: inc.mu0,
        mu1: inc.mu1,
        kappa,
    })
}

/// Initial guess shared by every solver on an instance.
pub(crate) fn initial_guess(
    config: &ExperimentConfig,
    inst: &Instance,
    data: &ObservedData,
    r: usize,
    trial_seed: u64,
) -> Result<LowRankMatrix> {
    let opts = config.init_options(inst.mu0, stream_seed(trial_seed, Stream::Init));
    initialize(data, r, &opts)
}

/// Runs one solver from `x0` and fills the outcome columns of `row`.
pub(crate) fn solve_into_row(
    config: &ExperimentConfig,
    inst: &Instance,
    data: &ObservedData,
    x0: &LowRankMatrix,
    row: &mut ResultRow,
    observer: impl FnMut(&LowRankMatrix, &StepRecord),
) -> Option<Solution> {
    row.mu0 = Some(inst.mu0);
    row.mu1 = Some(inst.mu1);
    row.kappa = Some(inst.kappa);
    let start = Instant::now();
    let solved = solve_observed(data, x0, &config.solver_options(row.solver), observer);
    row.wall_time = Some(start.elapsed().as_secs_f64());
    match solved {
        Ok(sol) => {
            let rel_error = sol.x.distance(&inst.x) / inst.x.frobenius_norm();
            row.status = sol.trace.status.to_string();
            row.rel_error = Some(rel_error);
            row.success = Some(rel_error <= config.success_threshold);
            row.rel_residual = Some(sol.trace.final_residual());
            row.iterations = Some(sol.trace.iterations());
            row.restarts = Some(sol.trace.restarts());
            row.error = sol.trace.error.clone();
            Some(sol)
        }
        Err(e) => {
            row.status = "failed".into();
            row.success = Some(false);
            row.error = Some(e.to_string());
            None
        }
    }
}

pub(crate) fn mark_failed(row: &mut ResultRow, e: &crate::Error) {
    row.status = "failed".into();
    row.success = Some(false);
    row.error = Some(e.to_string());
}

/// Position of a solver in the configured list, used to order rows.
pub(crate) fn solver_rank(config: &ExperimentConfig, v: SolverVariant) -> usize {
    config.solvers.iter().position(|s| *s == v).unwrap_or(usize::MAX)
}

/// Runs the experiment named in `config`.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    Ok(match config.experiment {
        ExperimentKind::Phase => RunOutput::Results(run_phase(config)?),
        ExperimentKind::Noise => RunOutput::Results(run_noise(config)?),
        ExperimentKind::Convergence => RunOutput::Convergence(run_convergence(config)?),
        ExperimentKind::Verify => RunOutput::Verify(run_verify(config)?),
    })
}
