//! Numerical checks of the convergence theory: projection bounds, local and
//! asymmetric isometry constants, the scalar recursion behind the conjugate
//! gradient rate, Procrustes alignment, and the rate constants themselves.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dense_svd, gaussian_matrix, singular_values, symmetric_eigen, LowRankMatrix};
use crate::sampling::{apply_sampling, check_shape, mu0_of, SamplingSet};
use crate::tangent::{TangentSpace, TangentVector};

/// Log exponent used in every probabilistic bound.
pub const BETA_LOG: f64 = 2.0;

/// Relative slack granted to inequality checks for rounding.
const SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ConvergenceConstants {
    pub epsilon0: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub beta_log: f64,
    pub nu_g: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub nu_cg: f64,
    /// Bound on `|beta_l|` when no restart happens.
    pub epsilon_beta: f64,
    /// Bound on `|alpha_l p - 1|` when no restart happens.
    pub epsilon_alpha: f64,
    pub tau_sum_below_one: bool,
    pub nu_cg_below_one: bool,
}

/// Rates of RGrad (`nu_g`) and restarted RCG (`nu_cg`) as functions of the
/// isometry level `epsilon0` and the restart thresholds.
pub fn convergence_constants(
    epsilon0: f64,
    kappa1: f64,
    kappa2: f64,
    beta_log: f64,
) -> Result<ConvergenceConstants> {
    if !(0.0..0.25).contains(&epsilon0) {
        return Err(Error::Regime(format!("epsilon0 = {epsilon0} must lie in [0, 1/4)")));
    }
    if kappa1 < 0.0 || kappa2 < 0.0 {
        return Err(Error::InvalidArgument("kappa1 and kappa2 must be nonnegative".into()));
    }
    let one_minus = 1.0 - 4.0 * epsilon0;
    let one_plus = 1.0 + 4.0 * epsilon0;
    let den = one_minus - kappa1 * one_plus;
    if !(den > 0.0) {
        return Err(Error::Regime(format!(
            "(1 - 4 eps0) - kappa1 (1 + 4 eps0) = {den} is not positive"
        )));
    }
    let nu_g = 18.0 * epsilon0 / one_minus;
    let tau1 = (18.0 * epsilon0 - 10.0 * kappa1 * epsilon0 * one_plus) / den
        + (4.0 * kappa2 * epsilon0 + kappa1 * kappa2) / one_minus;
    let tau2 = (8.0 * kappa2 * epsilon0 + 2.0 * kappa1 * kappa2) / one_minus;
    let nu_cg = (tau1 + (tau1 * tau1 + 4.0 * tau2).sqrt()) / 2.0;
    Ok(ConvergenceConstants {
        epsilon0,
        kappa1,
        kappa2,
        beta_log,
        nu_g,
        tau1,
        tau2,
        nu_cg,
        epsilon_beta: 4.0 * kappa2 * epsilon0 / one_minus + kappa1 * kappa2 / one_minus,
        epsilon_alpha: 4.0 * epsilon0 / den,
        tau_sum_below_one: tau1 + tau2 < 1.0,
        nu_cg_below_one: nu_cg < 1.0,
    })
}

/// One inequality `lhs <= rhs`.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    fn new(name: &'static str, lhs: f64, rhs: f64, scale: f64) -> Self {
        let holds = lhs <= rhs * (1.0 + SLACK) + SLACK * 1e-3 * scale;
        BoundCheck {
            name,
            lhs,
            rhs,
            holds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ProjectionBoundsReport {
    /// `||X_l - X||_F / sigma_min(X)`.
    pub delta: f64,
    pub checks: Vec<BoundCheck>,
}

impl ProjectionBoundsReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.holds).count()
    }
}

fn projector(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    singular_values(a).ok().and_then(|s| s.first().copied()).unwrap_or(f64::NAN)
}

fn dense_tangent_projection(u: &DMatrix<f64>, v: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let uz = u * u.tr_mul(z);
    let zv = (z * v) * v.transpose();
    let uzv = u * (u.tr_mul(z) * v) * v.transpose();
    uz + zv - uzv
}

/// Dense evaluation of the six projection inequalities between two rank-r
/// points; `||P_{T_l} - P_T||` is computed by Lanczos on the difference.
pub fn check_projection_bounds(x_l: &LowRankMatrix, x: &LowRankMatrix) -> Result<ProjectionBoundsReport> {
    check_shape(x.shape(), x_l.shape())?;
    let sigma_min = x.sigma()[x.rank() - 1];
    if !(sigma_min > 0.0) {
        return Err(Error::DegenerateRank { sigma_min });
    }
    let dist = x_l.distance(x);
    let delta = dist / sigma_min;
    let du = projector(x_l.u()) - projector(x.u());
    let dv = projector(x_l.v()) - projector(x.v());
    let xd = x.to_dense();
    let outside = &xd - dense_tangent_projection(x_l.u(), x_l.v(), &xd);

    let (nr, nc) = x.shape();
    let apply = |flat: &DVector<f64>| {
        let z = DMatrix::from_column_slice(nr, nc, flat.as_slice());
        let d = dense_tangent_projection(x_l.u(), x_l.v(), &z)
            - dense_tangent_projection(x.u(), x.v(), &z);
        DVector::from_column_slice(d.as_slice())
    };
    let start = DVector::from_column_slice(gaussian_matrix(nr, nc, &mut ChaCha8Rng::seed_from_u64(1)).as_slice());
    let tangent_gap = lanczos_norm(apply, start, 500, 1e-10).value;

    let checks = vec![
        BoundCheck::new("u_projector_spectral", spectral_norm(&du), delta, 1.0),
        BoundCheck::new("v_projector_spectral", spectral_norm(&dv), delta, 1.0),
        BoundCheck::new("u_projector_frobenius", du.norm(), 2f64.sqrt() * delta, 1.0),
        BoundCheck::new("v_projector_frobenius", dv.norm(), 2f64.sqrt() * delta, 1.0),
        BoundCheck::new(
            "normal_component",
            outside.norm(),
            dist * dist / sigma_min,
            x.frobenius_norm(),
        ),
        BoundCheck::new("tangent_projector_gap", tangent_gap, 2.0 * delta, 1.0),
    ];
    Ok(ProjectionBoundsReport { delta, checks })
}

struct LanczosResult {
    value: f64,
    steps: usize,
    residual: f64,
    converged: bool,
}

/// Largest `|eigenvalue|` of a symmetric operator by Lanczos with full
/// reorthogonalization. Stops when the Ritz residual of the extreme pair
/// falls below `tol` times its value, or when the Krylov space is invariant.
fn lanczos_norm(
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    start: DVector<f64>,
    max_steps: usize,
    tol: f64,
) -> LanczosResult {
    let dim = start.len();
    let norm0 = start.norm();
    if norm0 == 0.0 || dim == 0 {
        return LanczosResult {
            value: 0.0,
            steps: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let max_steps = max_steps.min(dim);
    let mut basis: Vec<DVector<f64>> = vec![start / norm0];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = LanczosResult {
        value: 0.0,
        steps: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    for k in 0..max_steps {
        let mut w = apply(&basis[k]);
        let a = basis[k].dot(&w);
        alphas.push(a);
        for _ in 0..2 {
            for q in &basis {
                let h = q.dot(&w);
                w.axpy(-h, q, 1.0);
            }
        }
        let b = w.norm();
        let steps = k + 1;
        let check = steps < 40 || steps % 5 == 0 || steps == max_steps;
        let scale = alphas.iter().map(|x| x.abs()).fold(0.0, f64::max).max(b);
        let invariant = b <= 1e-14 * scale.max(f64::MIN_POSITIVE);
        if check || invariant {
            let mut t = DMatrix::zeros(steps, steps);
            for i in 0..steps {
                t[(i, i)] = alphas[i];
                if i + 1 < steps {
                    t[(i, i + 1)] = betas[i];
                    t[(i + 1, i)] = betas[i];
                }
            }
            let Ok((eigenvalues, eigenvectors)) = symmetric_eigen(&t) else {
                break;
            };
            let (idx, value) = eigenvalues
                .iter()
                .enumerate()
                .map(|(i, v)| (i, v.abs()))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            let residual = b * eigenvectors[(steps - 1, idx)].abs();
            last = LanczosResult {
                value,
                steps,
                residual,
                converged: invariant || residual <= tol * value.max(f64::MIN_POSITIVE),
            };
            if last.converged || value == 0.0 {
                last.converged = true;
                return last;
            }
        }
        if invariant {
            break;
        }
        betas.push(b);
        basis.push(w / b);
    }
    last
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RipEstimate {
    /// Estimated operator norm.
    pub value: f64,
    pub iterations: usize,
    /// Ritz residual of the extreme pair at termination.
    pub residual: f64,
    pub converged: bool,
    pub theoretical_bound: f64,
}

fn flatten(t: &TangentVector) -> DVector<f64> {
    let mut out = Vec::with_capacity(t.m().len() + t.y1().len() + t.y2().len());
    out.extend_from_slice(t.m().as_slice());
    out.extend_from_slice(t.y1().as_slice());
    out.extend_from_slice(t.y2().as_slice());
    DVector::from_vec(out)
}

fn unflatten(space: &TangentSpace, flat: &DVector<f64>) -> TangentVector {
    let r = space.rank();
    let (nr, nc) = space.shape();
    let s = flat.as_slice();
    let m = DMatrix::from_column_slice(r, r, &s[..r * r]);
    let y1 = DMatrix::from_column_slice(nc, r, &s[r * r..r * r + nc * r]);
    let y2 = DMatrix::from_column_slice(nr, r, &s[r * r + nc * r..]);
    TangentVector::from_parts(space, m, y1, y2).expect("shapes follow the space")
}

/// `||P_T - p^{-1} P_T P_Omega P_T||` over the tangent space at `x`, with
/// the bound `sqrt(32 beta mu0 n r log(n) / (3 m))`, `mu0` measured on `x`.
pub fn estimate_local_rip(x: &LowRankMatrix, s: &SamplingSet, seed: u64) -> Result<RipEstimate> {
    check_shape(x.shape(), s.shape())?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("no sampled entries".into()));
    }
    let space = TangentSpace::at(x);
    let inv_p = 1.0 / s.p();
    let apply = |flat: &DVector<f64>| {
        let t = unflatten(&space, flat);
        let sampled = apply_sampling(s, &t).expect("shapes checked");
        let back = space.project(&sampled).scaled(inv_p);
        let out = t.add_scaled(-1.0, &back).expect("same space");
        flatten(&out)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nr, nc) = x.shape();
    let start = space.project(&gaussian_matrix(nr, nc, &mut rng));
    let res = lanczos_norm(apply, flatten(&start), 500, 1e-8);
    let n = nr.max(nc) as f64;
    let r = x.rank() as f64;
    let bound = (32.0 * BETA_LOG * mu0_of(x) * n * r * n.ln() / (3.0 * s.m() as f64)).sqrt();
    Ok(RipEstimate {
        value: res.value,
        iterations: res.steps,
        residual: res.residual,
        converged: res.converged,
        theoretical_bound: bound,
    })
}

/// Norm of `p^{-1} P_{T_l} P_Omega D - P_{T_l} D` with
/// `D(Z) = (UU^T - U_l U_l^T) Z`, from its Gram operator, against the bound
/// `sqrt(48 beta mu n r log(n) / m)` with `mu` the larger measured incoherence.
pub fn estimate_asymmetric_rip(
    x_l: &LowRankMatrix,
    x: &LowRankMatrix,
    s: &SamplingSet,
    seed: u64,
) -> Result<RipEstimate> {
    check_shape(x.shape(), x_l.shape())?;
    check_shape(x.shape(), s.shape())?;
    if s.is_empty() {
        return Err(Error::InvalidArgument("no sampled entries".into()));
    }
    let (nr, nc) = x.shape();
    let inv_p = 1.0 / s.p();
    let d = projector(x.u()) - projector(x_l.u());
    let (ul, vl) = (x_l.u(), x_l.v());
    let sample = |z: &DMatrix<f64>| apply_sampling(s, z).expect("shapes checked").to_dense();
    // B(Z) = P_Tl(p^{-1} P_Omega(DZ) - DZ); B^T(Y) = D(p^{-1} P_Omega(P_Tl Y) - P_Tl Y)
    let forward = |z: &DMatrix<f64>| {
        let dz = &d * z;
        dense_tangent_projection(ul, vl, &(sample(&dz) * inv_p - dz))
    };
    let backward = |y: &DMatrix<f64>| {
        let py = dense_tangent_projection(ul, vl, y);
        &d * (sample(&py) * inv_p - py)
    };
    let gram = |flat: &DVector<f64>| {
        let z = DMatrix::from_column_slice(nr, nc, flat.as_slice());
        let out = backward(&forward(&z));
        DVector::from_column_slice(out.as_slice())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = DVector::from_column_slice(gaussian_matrix(nr, nc, &mut rng).as_slice());
    let res = lanczos_norm(gram, start, 500, 1e-8);
    let n = nr.max(nc) as f64;
    let r = x.rank() as f64;
    let mu = mu0_of(x).max(mu0_of(x_l));
    let bound = (48.0 * BETA_LOG * mu * n * r * n.ln() / s.m() as f64).sqrt();
    Ok(RipEstimate {
        value: res.value.sqrt(),
        iterations: res.steps,
        residual: res.residual,
        converged: res.converged,
        theoretical_bound: bound,
    })
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct RecursionReport {
    pub tau1: f64,
    pub tau2: f64,
    pub nu: f64,
    /// `c_0, c_1, ..., c_horizon` of the extremal sequence.
    pub sequence: Vec<f64>,
    /// Largest `c_l / (nu^l c_0)` over `l <= horizon`.
    pub max_ratio: f64,
    pub violations: usize,
}

/// Evaluates the extremal sequence `c_1 = nu c_0`,
/// `c_{l+1} = rho1 c_l + rho2 sum_{j<l} gamma^{l-j} c_j` and checks
/// `c_l <= nu^l c_0` up to `horizon`.
pub fn check_recursion(
    rho1: f64,
    rho2: f64,
    gamma: f64,
    c0: f64,
    horizon: usize,
) -> Result<RecursionReport> {
    if !(rho1 > 0.0 && rho2 >= rho1 && gamma >= 0.0 && c0 >= 0.0) {
        return Err(Error::InvalidArgument(
            "need rho2 >= rho1 > 0, gamma >= 0 and c0 >= 0".into(),
        ));
    }
    let tau1 = rho1 + gamma;
    let tau2 = (rho2 - rho1) * gamma;
    if !(tau1 + tau2 < 1.0) {
        return Err(Error::Regime(format!("tau1 + tau2 = {} is not below 1", tau1 + tau2)));
    }
    let nu = (tau1 + (tau1 * tau1 + 4.0 * tau2).sqrt()) / 2.0;
    let mut c = vec![c0, nu * c0];
    // tail = sum_{j < l} gamma^{l - j} c_j, updated as tail <- gamma (tail + c_{l-1})
    let mut tail = 0.0;
    for l in 1..horizon {
        tail = gamma * (tail + c[l - 1]);
        c.push(rho1 * c[l] + rho2 * tail);
    }
    c.truncate(horizon + 1);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for (l, &cl) in c.iter().enumerate() {
        let bound = nu.powi(l as i32) * c0;
        if bound > 0.0 {
            max_ratio = max_ratio.max(cl / bound);
        }
        if cl > bound * (1.0 + SLACK) {
            violations += 1;
        }
    }
    Ok(RecursionReport {
        tau1,
        tau2,
        nu,
        sequence: c,
        max_ratio,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcrustesReport {
    pub q: DMatrix<f64>,
    /// `||U_l - U Q||_F`.
    pub chordal: f64,
    /// `||U_l U_l^T - U U^T||_F`.
    pub projector_dist: f64,
    pub holds: bool,
}

/// Best rotation `Q = Q1 Q2^T` from the SVD `U^T U_l = Q1 L Q2^T`.
pub fn procrustes_align(u_l: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<ProcrustesReport> {
    if u_l.shape() != u.shape() {
        return Err(Error::ShapeMismatch {
            expected: u.shape(),
            found: u_l.shape(),
        });
    }
    let (q1, _, q2) = dense_svd(&u.tr_mul(u_l))?;
    let q = q1 * q2.transpose();
    let chordal = (u_l - u * &q).norm();
    let projector_dist = (projector(u_l) - projector(u)).norm();
    Ok(ProcrustesReport {
        holds: chordal <= projector_dist * (1.0 + SLACK) + SLACK * 1e-3,
        q,
        chordal,
        projector_dist,
    })
}

/// Largest row norm of the factors of `z_hat` against
/// `(10/9) sqrt(mu0_cap r / n)`, the incoherence a trimmed iterate keeps when
/// it started close to an incoherent truth.
pub fn check_trimmed_incoherence(z_hat: &LowRankMatrix, mu0_cap: f64) -> BoundCheck {
    let r = z_hat.rank() as f64;
    let row_max = |f: &DMatrix<f64>| (0..f.nrows()).map(|i| f.row(i).norm()).fold(0.0, f64::max);
    let lhs_u = row_max(z_hat.u()) / (mu0_cap * r / z_hat.n_rows() as f64).sqrt();
    let lhs_v = row_max(z_hat.v()) / (mu0_cap * r / z_hat.n_cols() as f64).sqrt();
    let lhs = lhs_u.max(lhs_v);
    let rhs = 10.0 / 9.0;
    BoundCheck {
        name: "trimmed_incoherence",
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + 1e-10),
    }
}
