use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{InitOptions, InitScheme, Z0Scaling};
use crate::linalg::TruncatedSvdOptions;
use crate::sampling::SamplingMode;
use crate::solvers::{RestartRule, SolverOptions, SolverVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Phase,
    Convergence,
    Noise,
    Verify,
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Phase => "phase",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Noise => "noise",
            ExperimentKind::Verify => "verify",
        })
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase" => Ok(ExperimentKind::Phase),
            "convergence" => Ok(ExperimentKind::Convergence),
            "noise" => Ok(ExperimentKind::Noise),
            "verify" => Ok(ExperimentKind::Verify),
            other => Err(Error::InvalidArgument(format!("unknown experiment {other:?}"))),
        }
    }
}

/// Flat experiment description, read from TOML.
///
/// Grids are lists; keys that do not apply to the chosen experiment are
/// ignored. `q` and `oversampling` (`1/q`) are alternative spellings of the
/// same grid and may not both be given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    /// Explicit rank. The phase experiment derives r from `q` instead.
    pub r: Option<usize>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub oversampling: Vec<f64>,
    pub sigma: Vec<f64>,
    pub trials: usize,
    pub solvers: Vec<SolverVariant>,
    pub success_threshold: f64,
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub master_seed: u64,
    pub sampling: SamplingMode,
    pub init: InitScheme,
    pub init_groups: usize,
    /// Trimming level of the resampled init; the ground truth's measured
    /// `mu0` when absent.
    pub init_mu0_cap: Option<f64>,
    pub z0_scaling: Z0Scaling,
    pub stagnation_tol: Option<f64>,
    pub stagnation_window: usize,
    pub kappa1: f64,
    pub kappa2: f64,
    pub svd_tol: f64,
    pub svd_max_iterations: usize,

    /// Convergence runs: check the RGrad stepsize bracket against a tangent
    /// RIP estimate on every `bracket_stride`-th iterate (0 disables).
    pub bracket_stride: usize,
    /// Convergence runs: number of trials (per ratio) whose RGrad iterates are
    /// checked.
    pub bracket_trials: usize,

    pub projection_instances: usize,
    pub procrustes_pairs: usize,
    pub recursion_draws: usize,
    pub recursion_horizon: usize,
    pub rip_seeds: usize,
    pub rip_n: usize,
    pub rip_r: usize,
    /// `m = rip_samples_factor * n * r * ln(n)`.
    pub rip_samples_factor: f64,
    /// Fraction of RIP seeds that must satisfy the bound.
    pub rip_pass_fraction: f64,
    pub trim_instances: usize,
    /// Fault injection: skip the row cap in the trim check.
    pub trim_cap_ignored: bool,
    pub constants_epsilon0: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let svd = TruncatedSvdOptions::default();
        Self {
            experiment: ExperimentKind::Phase,
            n: 200,
            r: None,
            p: Vec::new(),
            q: Vec::new(),
            oversampling: Vec::new(),
            sigma: Vec::new(),
            trials: 10,
            solvers: vec![SolverVariant::Rgrad, SolverVariant::Rcg, SolverVariant::RcgRestarted],
            success_threshold: 1e-2,
            residual_tol: 1e-9,
            max_iterations: 500,
            master_seed: 0,
            sampling: SamplingMode::WithoutReplacement,
            init: InitScheme::OneStepHt,
            init_groups: 5,
            init_mu0_cap: None,
            z0_scaling: Z0Scaling::InverseP,
            stagnation_tol: None,
            stagnation_window: 10,
            kappa1: 0.1,
            kappa2: 1.0,
            svd_tol: svd.tol,
            svd_max_iterations: svd.max_iterations,
            bracket_stride: 0,
            bracket_trials: 0,
            projection_instances: 1000,
            procrustes_pairs: 500,
            recursion_draws: 100,
            recursion_horizon: 50,
            rip_seeds: 100,
            rip_n: 60,
            rip_r: 2,
            rip_samples_factor: 20.0,
            rip_pass_fraction: 0.95,
            trim_instances: 20,
            trim_cap_ignored: false,
            constants_epsilon0: vec![0.001, 0.005, 0.01, 0.02],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The `q` grid, from either spelling.
    pub fn q_grid(&self) -> Vec<f64> {
        if self.oversampling.is_empty() {
            self.q.clone()
        } else {
            self.oversampling.iter().map(|o| 1.0 / o).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if !self.q.is_empty() && !self.oversampling.is_empty() {
            return bad("give either q or oversampling, not both");
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.q) || !positive(&self.oversampling) {
            return bad("q and oversampling entries must be positive");
        }
        if !self.p.iter().all(|p| p.is_finite() && *p > 0.0 && *p <= 1.0) {
            return bad("p entries must lie in (0, 1]");
        }
        if !self.sigma.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return bad("sigma entries must be nonnegative");
        }
        if let Some(r) = self.r {
            if r == 0 || r > self.n {
                return bad("r must lie in 1..=n");
            }
        }
        if !(self.success_threshold > 0.0) {
            return bad("success_threshold must be positive");
        }
        if !(self.svd_tol > 0.0) || self.svd_max_iterations == 0 {
            return bad("svd_tol and svd_max_iterations must be positive");
        }
        if let Some(cap) = self.init_mu0_cap {
            if !(cap >= 1.0) {
                return bad("init_mu0_cap must be at least 1");
            }
        }
        if self.experiment != ExperimentKind::Verify {
            if self.trials == 0 {
                return bad("trials must be positive");
            }
            if self.solvers.is_empty() {
                return bad("solvers must be nonempty");
            }
        }
        match self.experiment {
            ExperimentKind::Phase => {
                if self.p.is_empty() || self.q_grid().is_empty() {
                    return bad("phase needs nonempty p and q grids");
                }
            }
            ExperimentKind::Convergence | ExperimentKind::Noise => {
                if self.r.is_none() {
                    return bad("convergence and noise need r");
                }
                if self.q_grid().is_empty() {
                    return bad("convergence and noise need a q (or oversampling) grid");
                }
                if self.experiment == ExperimentKind::Noise && self.sigma.is_empty() {
                    return bad("noise needs a sigma grid");
                }
            }
            ExperimentKind::Verify => {
                if self.rip_r == 0 || self.rip_r > self.rip_n {
                    return bad("rip_r must lie in 1..=rip_n");
                }
                if !(0.0..=1.0).contains(&self.rip_pass_fraction) {
                    return bad("rip_pass_fraction must lie in [0, 1]");
                }
                if self.recursion_horizon == 0 {
                    return bad("recursion_horizon must be positive");
                }
            }
        }
        self.solver_options(SolverVariant::Rgrad).validate()
    }

    pub fn svd_options(&self) -> TruncatedSvdOptions {
        TruncatedSvdOptions {
            tol: self.svd_tol,
            max_iterations: self.svd_max_iterations,
            ..TruncatedSvdOptions::default()
        }
    }

    pub fn solver_options(&self, variant: SolverVariant) -> SolverOptions {
        SolverOptions {
            variant,
            max_iterations: self.max_iterations,
            rel_residual_tol: self.residual_tol,
            restart: RestartRule {
                kappa1: self.kappa1,
                kappa2: self.kappa2,
            },
            stagnation_tol: self.stagnation_tol,
            stagnation_window: self.stagnation_window,
            svd: self.svd_options(),
        }
    }

    pub fn init_options(&self, mu0_truth: f64, seed: u64) -> InitOptions {
        InitOptions {
            scheme: self.init,
            groups: self.init_groups,
            mu0_cap: self.init_mu0_cap.unwrap_or(mu0_truth.max(1.0)),
            seed,
            z0_scaling: self.z0_scaling,
            svd: self.svd_options(),
        }
    }
}

/// Largest `r` with `(2n - r) r <= budget`, or 0 when even `r = 1` does not fit.
pub fn rank_for_budget(n: usize, budget: f64) -> usize {
    let mut r = 0;
    while r < n && ((2 * n - (r + 1)) * (r + 1)) as f64 <= budget {
        r += 1;
    }
    r
}
