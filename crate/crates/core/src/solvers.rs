//! Riemannian gradient descent, Riemannian conjugate gradient (plain and
//! restarted) and normalized iterative hard thresholding.
//!
//! Solvers only see [`ObservedData`]; the residual is measured on the
//! observed entries, `||P_Omega(X - X_l)||_F / ||P_Omega(X)||_F`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{truncated_svd, LinearOperator, LowRankMatrix, TruncatedSvdOptions};
use crate::sampling::{EntrySource, ObservedData};
use crate::sparse::SparseMatrix;
use crate::tangent::{retract, TangentSpace, TangentVector};

/// Stepsize denominators at or below this are treated as degenerate.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverVariant {
    Rgrad,
    Rcg,
    RcgRestarted,
    Niht,
}

impl SolverVariant {
    pub const ALL: [SolverVariant; 4] = [
        SolverVariant::Rgrad,
        SolverVariant::Rcg,
        SolverVariant::RcgRestarted,
        SolverVariant::Niht,
    ];
}

impl fmt::Display for SolverVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverVariant::Rgrad => "rgrad",
            SolverVariant::Rcg => "rcg",
            SolverVariant::RcgRestarted => "rcg_restarted",
            SolverVariant::Niht => "niht",
        })
    }
}

impl FromStr for SolverVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgrad" => Ok(SolverVariant::Rgrad),
            "rcg" => Ok(SolverVariant::Rcg),
            "rcg_restarted" => Ok(SolverVariant::RcgRestarted),
            "niht" => Ok(SolverVariant::Niht),
            other => Err(Error::InvalidArgument(format!("unknown solver {other:?}"))),
        }
    }
}

/// Thresholds of the restart test for conjugate directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestartRule {
    /// Largest allowed `|<G, P>| / (||G|| ||P||)`.
    pub kappa1: f64,
    /// Largest allowed `||G|| / ||P||`.
    pub kappa2: f64,
}

impl Default for RestartRule {
    fn default() -> Self {
        Self {
            kappa1: 0.1,
            kappa2: 1.0,
        }
    }
}

impl RestartRule {
    /// True when the direction should be reset, given `<G, P>`, `||G||`, `||P||`.
    pub fn fires(&self, cross: f64, g_norm: f64, p_norm: f64) -> bool {
        cross.abs() > self.kappa1 * g_norm * p_norm || g_norm > self.kappa2 * p_norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub variant: SolverVariant,
    pub max_iterations: usize,
    pub rel_residual_tol: f64,
    pub restart: RestartRule,
    /// Stop once the residual has improved by less than this relative amount
    /// over `stagnation_window` iterations. Off when `None`.
    pub stagnation_tol: Option<f64>,
    pub stagnation_window: usize,
    /// Used by NIHT for its rank-r projection.
    pub svd: TruncatedSvdOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            variant: SolverVariant::Rgrad,
            max_iterations: 500,
            rel_residual_tol: 1e-9,
            restart: RestartRule::default(),
            stagnation_tol: None,
            stagnation_window: 10,
            svd: TruncatedSvdOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_residual_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_residual_tol must be positive".into()));
        }
        if !(self.restart.kappa1 >= 0.0 && self.restart.kappa2 >= 0.0) {
            return Err(Error::InvalidArgument("kappa1 and kappa2 must be nonnegative".into()));
        }
        if let Some(t) = self.stagnation_tol {
            if !(t > 0.0) || self.stagnation_window == 0 {
                return Err(Error::InvalidArgument(
                    "stagnation needs a positive tolerance and window".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Stepsize data of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct StepInfo {
    pub alpha: f64,
    pub beta: f64,
    pub restarted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct StepRecord {
    /// 1-based count of completed iterations.
    pub iteration: usize,
    /// Observed relative residual after the step.
    pub rel_residual: f64,
    pub alpha: f64,
    pub beta: f64,
    pub restarted: bool,
    /// Seconds since the solve started.
    pub wall_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    Stagnated,
    RankCollapse,
    NumericalError,
}

impl fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::Stagnated => "stagnated",
            SolverStatus::RankCollapse => "rank_collapse",
            SolverStatus::NumericalError => "numerical_error",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrace {
    pub initial_residual: f64,
    pub records: Vec<StepRecord>,
    pub status: SolverStatus,
    /// Message of the error that stopped the run, if any.
    pub error: Option<String>,
}

impl SolverTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_residual(&self) -> f64 {
        self.records.last().map_or(self.initial_residual, |r| r.rel_residual)
    }

    pub fn restarts(&self) -> usize {
        self.records.iter().filter(|r| r.restarted).count()
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// Last successfully computed iterate.
    pub x: LowRankMatrix,
    pub trace: SolverTrace,
}

/// `(X - X_l)` on each observed location (no multiplicity).
fn residual_values(x_l: &LowRankMatrix, data: &ObservedData) -> Vec<f64> {
    let fitted = x_l.entries_on(data.sampling());
    data.values().iter().zip(fitted).map(|(v, f)| v - f).collect()
}

fn residual_norm(data: &ObservedData, res: &[f64]) -> f64 {
    data.sampling()
        .multiplicities()
        .iter()
        .zip(res)
        .map(|(&c, r)| (c as f64 * r).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn gradient(data: &ObservedData, res: &[f64]) -> SparseMatrix {
    data.sampling().weighted_sparse(res, 1.0)
}

fn check_inputs(x_l: &LowRankMatrix, data: &ObservedData) -> Result<()> {
    crate::sampling::check_shape(data.shape(), x_l.shape())?;
    if data.sampling().is_empty() {
        return Err(Error::InvalidArgument("no observed entries".into()));
    }
    Ok(())
}

fn stepsize(numerator: f64, denominator: f64) -> Result<f64> {
    if !(denominator > DEGENERATE_DENOMINATOR) {
        return Err(Error::DegenerateStepsize { denominator });
    }
    Ok(numerator / denominator)
}

/// `P_T(P_Omega(X - X_l))` and its raw entries on the observed locations.
fn projected_gradient(
    space: &TangentSpace,
    data: &ObservedData,
    res: &[f64],
) -> (TangentVector, Vec<f64>) {
    let pg = space.project(&gradient(data, res));
    let pg_vals = pg.entries_on(data.sampling());
    (pg, pg_vals)
}

fn rgrad_inner(
    x_l: &LowRankMatrix,
    data: &ObservedData,
    res: &[f64],
) -> Result<(LowRankMatrix, StepInfo)> {
    let space = TangentSpace::at(x_l);
    let (pg, pg_vals) = projected_gradient(&space, data, res);
    let num = pg.norm().powi(2);
    if num == 0.0 {
        return Ok((x_l.clone(), StepInfo::default()));
    }
    let den = data.sampling().weighted_dot(&pg_vals, &pg_vals);
    let alpha = stepsize(num, den)?;
    let x = retract(x_l, &pg.scaled(alpha), x_l.rank())?;
    Ok((
        x,
        StepInfo {
            alpha,
            beta: 0.0,
            restarted: false,
        },
    ))
}

/// One RGrad step from `x_l`.
pub fn rgrad_step(x_l: &LowRankMatrix, data: &ObservedData) -> Result<(LowRankMatrix, StepInfo)> {
    check_inputs(x_l, data)?;
    rgrad_inner(x_l, data, &residual_values(x_l, data))
}

fn rcg_inner(
    x_l: &LowRankMatrix,
    data: &ObservedData,
    res: &[f64],
    previous: Option<&TangentVector>,
    restart: Option<&RestartRule>,
) -> Result<(LowRankMatrix, TangentVector, StepInfo)> {
    let s = data.sampling();
    let space = TangentSpace::at(x_l);
    let (pg, pg_vals) = projected_gradient(&space, data, res);
    let g_norm = pg.norm();
    if g_norm == 0.0 {
        return Ok((x_l.clone(), space.zero(), StepInfo::default()));
    }

    let (direction, dir_vals, beta, restarted) = match previous {
        None => (pg.clone(), pg_vals, 0.0, false),
        Some(prev) => {
            // transport: re-project the old direction onto the new tangent space
            let pp = space.project(prev);
            let p_norm = pp.norm();
            let cross = pg.inner(&pp)?;
            let reset = p_norm == 0.0 || restart.is_some_and(|rule| rule.fires(cross, g_norm, p_norm));
            if reset {
                (pg.clone(), pg_vals, 0.0, true)
            } else {
                let pp_vals = pp.entries_on(s);
                let num = s.weighted_dot(&pg_vals, &pp_vals);
                let den = s.weighted_dot(&pp_vals, &pp_vals);
                let beta = -stepsize(num, den)?;
                let dir = pg.add_scaled(beta, &pp)?;
                let vals = pg_vals.iter().zip(&pp_vals).map(|(g, p)| g + beta * p).collect();
                (dir, vals, beta, false)
            }
        }
    };

    let num = pg.inner(&direction)?;
    let den = s.weighted_dot(&dir_vals, &dir_vals);
    let alpha = stepsize(num, den)?;
    let x = retract(x_l, &direction.scaled(alpha), x_l.rank())?;
    Ok((
        x,
        direction,
        StepInfo {
            alpha,
            beta,
            restarted,
        },
    ))
}

/// One RCG step. `previous` is the last search direction (based at the
/// previous iterate), `None` on the first iteration. With `restart` set the
/// direction is reset whenever [`RestartRule::fires`]. Returns the new
/// iterate and the new direction.
pub fn rcg_step(
    x_l: &LowRankMatrix,
    data: &ObservedData,
    previous: Option<&TangentVector>,
    restart: Option<&RestartRule>,
) -> Result<(LowRankMatrix, TangentVector, StepInfo)> {
    check_inputs(x_l, data)?;
    rcg_inner(x_l, data, &residual_values(x_l, data), previous, restart)
}

/// `X_l + alpha * G` as an operator, with `G` sparse.
struct ShiftedLowRank<'a> {
    low: &'a LowRankMatrix,
    sparse: &'a SparseMatrix,
}

impl LinearOperator for ShiftedLowRank<'_> {
    fn shape(&self) -> (usize, usize) {
        self.low.shape()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.low.apply(x) + self.sparse.apply(x)
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.low.apply_transpose(y) + self.sparse.apply_transpose(y)
    }
}

fn niht_inner(
    x_l: &LowRankMatrix,
    data: &ObservedData,
    res: &[f64],
    svd: &TruncatedSvdOptions,
) -> Result<(LowRankMatrix, StepInfo)> {
    let space = TangentSpace::at(x_l);
    let (pg, pg_vals) = projected_gradient(&space, data, res);
    let num = pg.norm().powi(2);
    if num == 0.0 {
        return Ok((x_l.clone(), StepInfo::default()));
    }
    let den = data.sampling().weighted_dot(&pg_vals, &pg_vals);
    let alpha = stepsize(num, den)?;
    let step = data.sampling().weighted_sparse(res, alpha);
    let op = ShiftedLowRank {
        low: x_l,
        sparse: &step,
    };
    let t = truncated_svd(&op, x_l.rank(), svd, Some(x_l.v()))?;
    Ok((
        t.matrix,
        StepInfo {
            alpha,
            beta: 0.0,
            restarted: false,
        },
    ))
}

/// One NIHT step `H_r(X_l + alpha P_Omega(X - X_l))`, with the stepsize of
/// RGrad.
pub fn niht_step(
    x_l: &LowRankMatrix,
    data: &ObservedData,
    svd: &TruncatedSvdOptions,
) -> Result<(LowRankMatrix, StepInfo)> {
    check_inputs(x_l, data)?;
    niht_inner(x_l, data, &residual_values(x_l, data), svd)
}

/// Runs the chosen solver from `x0`.
pub fn solve(
    data: &ObservedData,
    x0: &LowRankMatrix,
    options: &SolverOptions,
) -> Result<Solution> {
    solve_observed(data, x0, options, |_, _| {})
}

/// [`solve`], calling `observer(x_l, record)` after each completed
/// iteration with the iterate the step started from.
pub fn solve_observed(
    data: &ObservedData,
    x0: &LowRankMatrix,
    options: &SolverOptions,
    mut observer: impl FnMut(&LowRankMatrix, &StepRecord),
) -> Result<Solution> {
    options.validate()?;
    check_inputs(x0, data)?;
    let scale = data.observed_norm();
    if scale == 0.0 {
        return Err(Error::InvalidArgument("observed entries are all zero".into()));
    }
    let start = Instant::now();
    let mut x = x0.clone();
    let mut res = residual_values(&x, data);
    let initial_residual = residual_norm(data, &res) / scale;
    let mut trace = SolverTrace {
        initial_residual,
        records: Vec::new(),
        status: SolverStatus::MaxIterations,
        error: None,
    };
    if initial_residual <= options.rel_residual_tol {
        trace.status = SolverStatus::Converged;
        return Ok(Solution { x, trace });
    }

    let restart = (options.variant == SolverVariant::RcgRestarted).then_some(&options.restart);
    let mut direction: Option<TangentVector> = None;
    let mut history = vec![initial_residual];

    for l in 0..options.max_iterations {
        let step = match options.variant {
            SolverVariant::Rgrad => rgrad_inner(&x, data, &res),
            SolverVariant::Niht => niht_inner(&x, data, &res, &options.svd),
            SolverVariant::Rcg | SolverVariant::RcgRestarted => {
                rcg_inner(&x, data, &res, direction.as_ref(), restart).map(|(x, d, info)| {
                    direction = Some(d);
                    (x, info)
                })
            }
        };
        let (next, info) = match step {
            Ok(s) => s,
            Err(e) => {
                trace.status = match e {
                    Error::RankCollapse { .. } => SolverStatus::RankCollapse,
                    _ => SolverStatus::NumericalError,
                };
                trace.error = Some(e.to_string());
                return Ok(Solution { x, trace });
            }
        };
        res = residual_values(&next, data);
        let rel_residual = residual_norm(data, &res) / scale;
        let record = StepRecord {
            iteration: l + 1,
            rel_residual,
            alpha: info.alpha,
            beta: info.beta,
            restarted: info.restarted,
            wall_time: start.elapsed().as_secs_f64(),
        };
        observer(&x, &record);
        trace.records.push(record);
        history.push(rel_residual);
        x = next;

        if !rel_residual.is_finite() {
            trace.status = SolverStatus::NumericalError;
            trace.error = Some("residual is not finite".into());
            break;
        }
        if rel_residual <= options.rel_residual_tol {
            trace.status = SolverStatus::Converged;
            break;
        }
        if let Some(tol) = options.stagnation_tol {
            let w = options.stagnation_window;
            if history.len() > w && rel_residual >= (1.0 - tol) * history[history.len() - 1 - w] {
                trace.status = SolverStatus::Stagnated;
                break;
            }
        }
    }
    Ok(Solution { x, trace })
}
