//! Initial guesses: one-step hard thresholding and resampled gradient
//! descent with trimming.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dense_svd, normalize_signs, thin_qr, truncated_svd, LowRankMatrix};
use crate::linalg::TruncatedSvdOptions;
use crate::sampling::{EntrySource, ObservedData};
use crate::tangent::{retract, TangentSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    OneStepHt,
    ResampledTrimmed,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::OneStepHt => "one_step_ht",
            InitScheme::ResampledTrimmed => "resampled_trimmed",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one_step_ht" => Ok(InitScheme::OneStepHt),
            "resampled_trimmed" => Ok(InitScheme::ResampledTrimmed),
            other => Err(Error::InvalidArgument(format!("unknown init scheme {other:?}"))),
        }
    }
}

/// Scaling of the first group before the first hard threshold of the
/// resampled scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Z0Scaling {
    /// `n^2 / m_hat`, the inverse sampling ratio used by the one-step scheme.
    InverseP,
    /// `m_hat / n^2`, kept for comparison.
    Literal,
}

impl FromStr for Z0Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse_p" => Ok(Z0Scaling::InverseP),
            "literal" => Ok(Z0Scaling::Literal),
            other => Err(Error::InvalidArgument(format!("unknown z0 scaling {other:?}"))),
        }
    }
}

impl fmt::Display for Z0Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Z0Scaling::InverseP => "inverse_p",
            Z0Scaling::Literal => "literal",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitOptions {
    pub scheme: InitScheme,
    /// Number of gradient rounds; the samples are split into `groups + 1` parts.
    pub groups: usize,
    /// Incoherence level enforced by trimming; rows are capped at
    /// `sqrt(mu0_cap * r / n)`.
    pub mu0_cap: f64,
    pub seed: u64,
    pub z0_scaling: Z0Scaling,
    pub svd: TruncatedSvdOptions,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            scheme: InitScheme::OneStepHt,
            groups: 5,
            mu0_cap: 1.0,
            seed: 0,
            z0_scaling: Z0Scaling::InverseP,
            svd: TruncatedSvdOptions::default(),
        }
    }
}

/// `X_0 = H_r(p^{-1} P_Omega(X))`.
pub fn init_one_step(
    data: &ObservedData,
    r: usize,
    svd: &TruncatedSvdOptions,
) -> Result<LowRankMatrix> {
    if data.sampling().is_empty() {
        return Err(Error::InvalidArgument("no observed entries".into()));
    }
    let z = data.to_sparse(1.0 / data.sampling().p());
    Ok(truncated_svd(&z, r, svd, None)?.matrix)
}

/// Row-capped factors `A diag(sigma) B^T` before re-factoring.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimmedFactors {
    pub a: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub b: DMatrix<f64>,
}

impl TrimmedFactors {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = self.a.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            a.column_mut(k).scale_mut(*s);
        }
        a * self.b.transpose()
    }

    /// Reduced SVD of `A diag(sigma) B^T` from QRs of `A` and `B` and an
    /// `r x r` SVD.
    pub fn to_low_rank(&self) -> Result<LowRankMatrix> {
        let (qa, ra) = thin_qr(&self.a)?;
        let (qb, rb) = thin_qr(&self.b)?;
        let mut core = ra;
        for (k, s) in self.sigma.iter().enumerate() {
            core.column_mut(k).scale_mut(*s);
        }
        let core = core * rb.transpose();
        let (uc, s, vc) = dense_svd(&core)?;
        let mut u = qa * uc;
        let mut v = qb * vc;
        normalize_signs(&mut u, &mut v);
        Ok(LowRankMatrix::from_parts(u, s, v))
    }
}

fn cap_rows(f: &DMatrix<f64>, cap: f64) -> DMatrix<f64> {
    let mut out = f.clone();
    for i in 0..f.nrows() {
        let norm = f.row(i).norm();
        // zero rows stay zero
        if norm > cap {
            out.row_mut(i).scale_mut(cap / norm);
        }
    }
    out
}

/// Scales every row of `U` and `V` down to norm at most
/// `sqrt(mu0_cap * r / n)` (with `n` the factor's row count).
pub fn trim_factors(z: &LowRankMatrix, mu0_cap: f64) -> Result<TrimmedFactors> {
    if !(mu0_cap > 0.0) {
        return Err(Error::InvalidArgument("mu0_cap must be positive".into()));
    }
    let r = z.rank() as f64;
    let cap_u = (mu0_cap * r / z.n_rows() as f64).sqrt();
    let cap_v = (mu0_cap * r / z.n_cols() as f64).sqrt();
    Ok(TrimmedFactors {
        a: cap_rows(z.u(), cap_u),
        sigma: z.sigma().clone(),
        b: cap_rows(z.v(), cap_v),
    })
}

/// [`trim_factors`] followed by re-factoring into a reduced SVD.
pub fn trim(z: &LowRankMatrix, mu0_cap: f64) -> Result<LowRankMatrix> {
    trim_factors(z, mu0_cap)?.to_low_rank()
}

/// What the resampled scheme did, round by round.
#[derive(Clone, Debug, Default)]
pub struct InitTrace {
    /// Draw count of each group in the order they were consumed.
    pub group_sizes: Vec<usize>,
    /// Index of the group consumed by each stage (stage 0 builds `Z_0`).
    pub groups_used: Vec<usize>,
    /// `Z_0, ..., Z_L`.
    pub iterates: Vec<LowRankMatrix>,
}

/// Resampled gradient descent with trimming over a random split of `data`
/// into `options.groups + 1` groups.
pub fn init_resampled(
    data: &ObservedData,
    r: usize,
    options: &InitOptions,
) -> Result<(LowRankMatrix, InitTrace)> {
    if options.groups == 0 {
        return Err(Error::InvalidArgument("resampled init needs at least one round".into()));
    }
    let groups = data.partition(options.groups, options.seed)?;
    init_resampled_groups(&groups, r, options)
}

/// Same as [`init_resampled`] with the groups supplied by the caller; group
/// 0 builds `Z_0` and group `l + 1` drives round `l`.
pub fn init_resampled_groups(
    groups: &[ObservedData],
    r: usize,
    options: &InitOptions,
) -> Result<(LowRankMatrix, InitTrace)> {
    let Some(first) = groups.first() else {
        return Err(Error::InvalidArgument("no groups".into()));
    };
    let mut trace = InitTrace::default();
    let inv_p = |g: &ObservedData| 1.0 / g.sampling().p();
    let scale0 = match options.z0_scaling {
        Z0Scaling::InverseP => inv_p(first),
        Z0Scaling::Literal => first.sampling().p(),
    };
    let failure = |e: Error| Error::InitFailure(Box::new(e));
    let mut z = truncated_svd(&first.to_sparse(scale0), r, &options.svd, None)
        .map_err(failure)?
        .matrix;
    if z.sigma()[r - 1] <= 0.0 {
        return Err(failure(Error::DegenerateRank {
            sigma_min: z.sigma()[r - 1],
        }));
    }
    trace.group_sizes.push(first.sampling().m());
    trace.groups_used.push(0);
    trace.iterates.push(z.clone());

    for (l, group) in groups.iter().enumerate().skip(1) {
        crate::sampling::check_shape(z.shape(), group.shape())?;
        let z_hat = trim(&z, options.mu0_cap).map_err(failure)?;
        let fitted = z_hat.entries_on(group.sampling());
        let res: Vec<f64> = group.values().iter().zip(fitted).map(|(v, f)| v - f).collect();
        let grad = group.sampling().weighted_sparse(&res, inv_p(group));
        let step = TangentSpace::at(&z_hat).project(&grad);
        z = retract(&z_hat, &step, r).map_err(failure)?;
        trace.group_sizes.push(group.sampling().m());
        trace.groups_used.push(l);
        trace.iterates.push(z.clone());
    }
    Ok((z, trace))
}

/// Runs the configured scheme.
pub fn initialize(data: &ObservedData, r: usize, options: &InitOptions) -> Result<LowRankMatrix> {
    match options.scheme {
        InitScheme::OneStepHt => init_one_step(data, r, &options.svd),
        InitScheme::ResampledTrimmed => init_resampled(data, r, options).map(|(x, _)| x),
    }
}
