//! Dense and factored linear algebra: the rank-r matrix type, SVD helpers,
//! a rank-revealing thin QR, and an iterative truncated SVD for operators
//! that are only available through matrix-block products.
//!
//! Singular vectors follow one sign convention everywhere: in each left
//! singular vector the entry of largest magnitude (first one on ties) is
//! positive, and the matching right vector is flipped along with it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Residual columns below this multiple of `eps * ||Y||_F` are treated as
/// linearly dependent by [`thin_qr`].
const RANK_TOL_FACTOR: f64 = 64.0;

/// Tolerance used when validating user-supplied orthonormal factors.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// A rank-r matrix held as a reduced SVD `U diag(sigma) V^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankMatrix {
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v: DMatrix<f64>,
}

impl LowRankMatrix {
    /// Builds a factored matrix, checking shapes, ordering of `sigma` and
    /// orthonormality of the factors (to [`ORTHONORMAL_TOL`]).
    pub fn new(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = sigma.len();
        if u.ncols() != r || v.ncols() != r {
            return Err(Error::InvalidArgument(format!(
                "factor ranks disagree: U has {} columns, sigma {} values, V {} columns",
                u.ncols(),
                r,
                v.ncols()
            )));
        }
        if r == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument(
                "singular values must be finite and nonnegative".into(),
            ));
        }
        if sigma.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidArgument(
                "singular values must be nonincreasing".into(),
            ));
        }
        if orthonormality_error(&u) > ORTHONORMAL_TOL || orthonormality_error(&v) > ORTHONORMAL_TOL
        {
            return Err(Error::InvalidArgument(
                "singular vector factors are not orthonormal".into(),
            ));
        }
        Ok(Self { u, sigma, v })
    }

    pub(crate) fn from_parts(u: DMatrix<f64>, sigma: DVector<f64>, v: DMatrix<f64>) -> Self {
        debug_assert_eq!(u.ncols(), sigma.len());
        debug_assert_eq!(v.ncols(), sigma.len());
        Self { u, sigma, v }
    }

    pub fn n_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.v.nrows()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows(), self.n_cols())
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn sigma(&self) -> &DVector<f64> {
        &self.sigma
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        (self.u, self.sigma, self.v)
    }

    /// `U diag(sigma)`.
    pub fn scaled_u(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, s) in self.sigma.iter().enumerate() {
            us.column_mut(k).scale_mut(*s);
        }
        us
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.scaled_u() * self.v.transpose()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (0..self.rank())
            .map(|k| self.u[(i, k)] * self.sigma[k] * self.v[(j, k)])
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sigma.norm()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.sigma[0]
    }

    /// `||self - other||_F` computed from the factors in `O((m + n) r^2)`.
    pub fn distance(&self, other: &LowRankMatrix) -> f64 {
        // A - B = [Ua Ub] diag(Sa, -Sb) [Va Vb]^T; QR of the stacked factors
        // avoids the cancellation of expanding ||A||^2 + ||B||^2 - 2<A, B>.
        let (ka, kb) = (self.rank(), other.rank());
        let stack = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(x.nrows(), ka + kb);
            m.columns_mut(0, ka).copy_from(x);
            m.columns_mut(ka, kb).copy_from(y);
            m
        };
        let left = stack(&self.scaled_u(), &(-other.scaled_u()));
        let right = stack(&self.v, &other.v);
        match (thin_qr(&left), thin_qr(&right)) {
            (Ok((_, rl)), Ok((_, rr))) => (rl * rr.transpose()).norm(),
            _ => (self.to_dense() - other.to_dense()).norm(),
        }
    }
}

/// Extreme singular values of a rank-r matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumSummary {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub kappa: f64,
}

pub fn spectrum_summary(x: &LowRankMatrix) -> Result<SpectrumSummary> {
    let sigma_max = x.sigma[0];
    let sigma_min = x.sigma[x.rank() - 1];
    if sigma_min <= 0.0 {
        return Err(Error::DegenerateRank { sigma_min });
    }
    Ok(SpectrumSummary {
        sigma_min,
        sigma_max,
        kappa: sigma_max / sigma_min,
    })
}

/// A matrix that can be applied to blocks of vectors from either side.
pub trait LinearOperator {
    fn shape(&self) -> (usize, usize);

    /// `A * x`.
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// `A^T * y`.
    fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(y)
    }
}

impl LinearOperator for LowRankMatrix {
    fn shape(&self) -> (usize, usize) {
        LowRankMatrix::shape(self)
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.scaled_u() * self.v.tr_mul(x)
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        &self.v * self.scaled_u().tr_mul(y)
    }
}

/// Max-abs entry of `Q^T Q - I`.
pub fn orthonormality_error(q: &DMatrix<f64>) -> f64 {
    let g = q.tr_mul(q);
    let mut err: f64 = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            err = err.max((g[(i, j)] - target).abs());
        }
    }
    err
}

/// Flips singular pairs so that the largest-magnitude entry of each left
/// vector is positive.
pub fn normalize_signs(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) {
    for k in 0..u.ncols() {
        let col = u.column(k);
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            u.column_mut(k).neg_mut();
            v.column_mut(k).neg_mut();
        }
    }
}

fn to_faer(a: &DMatrix<f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn svd_failure(residual: f64) -> Error {
    Error::SvdNotConverged {
        iterations: 0,
        residual,
    }
}

/// faer's SVD on the bidiagonal QR path. Its divide-and-conquer path
/// (taken from dimension 128 up) returned NaN singular vectors on some
/// nearly rank-deficient retraction cores, so recursion is switched off.
fn faer_svd(a: &DMatrix<f64>, vectors: bool) -> Result<(faer::Mat<f64>, Vec<f64>, faer::Mat<f64>)> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::svd::{svd, svd_scratch, ComputeSvdVectors, SvdParams};

    let (m, n) = a.shape();
    let k = m.min(n);
    let mut params: faer::Spec<SvdParams, f64> = Default::default();
    params.config.recursion_threshold = usize::MAX;
    let want = if vectors { ComputeSvdVectors::Thin } else { ComputeSvdVectors::No };
    let mut s = faer::diag::Diag::<f64>::zeros(k);
    let mut u = faer::Mat::<f64>::zeros(m, if vectors { k } else { 0 });
    let mut v = faer::Mat::<f64>::zeros(n, if vectors { k } else { 0 });
    let mut buf = MemBuffer::new(svd_scratch::<f64>(m, n, want, want, faer::Par::Seq, params));
    svd(
        to_faer(a).as_ref(),
        s.as_mut(),
        vectors.then(|| u.as_mut()),
        vectors.then(|| v.as_mut()),
        faer::Par::Seq,
        MemStack::new(&mut buf),
        params,
    )
    .map_err(|_| svd_failure(f64::NAN))?;
    let s: Vec<f64> = s.column_vector().iter().copied().collect();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(svd_failure(f64::NAN));
    }
    Ok((u, s, v))
}

/// Singular values, nonincreasing.
pub fn singular_values(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    faer_svd(a, false).map(|(_, s, _)| s)
}

/// Eigenvalues (nondecreasing) and eigenvectors of a symmetric matrix,
/// read from its lower triangle.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    use faer::dyn_stack::{MemBuffer, MemStack};
    use faer::linalg::evd::{self_adjoint_evd, self_adjoint_evd_scratch, ComputeEigenvectors, SelfAdjointEvdParams};

    let n = a.nrows();
    let mut params: faer::Spec<SelfAdjointEvdParams, f64> = Default::default();
    params.config.recursion_threshold = usize::MAX;
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let mut u = faer::Mat::<f64>::zeros(n, n);
    let mut buf = MemBuffer::new(self_adjoint_evd_scratch::<f64>(
        n,
        ComputeEigenvectors::Yes,
        faer::Par::Seq,
        params,
    ));
    self_adjoint_evd(
        to_faer(a).as_ref(),
        s.as_mut(),
        Some(u.as_mut()),
        faer::Par::Seq,
        MemStack::new(&mut buf),
        params,
    )
    .map_err(|_| svd_failure(f64::NAN))?;
    let values = DVector::from_fn(n, |i, _| s.column_vector()[i]);
    let vectors = DMatrix::from_fn(n, n, |i, j| u[(i, j)]);
    if values.iter().chain(vectors.iter()).any(|x| !x.is_finite()) {
        return Err(svd_failure(f64::NAN));
    }
    Ok((values, vectors))
}

/// Thin SVD `a = U diag(s) V^T` with `s` sorted nonincreasing and the
/// package sign convention applied.
pub fn dense_svd(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let k = a.nrows().min(a.ncols());
    if k == 0 {
        return Ok((
            DMatrix::zeros(a.nrows(), 0),
            DVector::zeros(0),
            DMatrix::zeros(a.ncols(), 0),
        ));
    }
    // nalgebra's own SVD returned factorizations off by 1e-3 on some nearly
    // diagonal cores without reporting failure
    let (fu, fs, fv) = faer_svd(a, true)?;
    let mut us = DMatrix::from_fn(a.nrows(), k, |i, j| fu[(i, j)]);
    let mut vs = DMatrix::from_fn(a.ncols(), k, |i, j| fv[(i, j)]);
    let ss = DVector::from_vec(fs);
    if us.iter().chain(vs.iter()).any(|x| !x.is_finite()) {
        return Err(svd_failure(f64::NAN));
    }
    let scale = a.norm();
    let residual = (&us * DMatrix::from_diagonal(&ss) * vs.transpose() - a).norm();
    if residual > 1e-10 * scale {
        return Err(svd_failure(residual / scale));
    }
    normalize_signs(&mut us, &mut vs);
    Ok((us, ss, vs))
}

/// Orthonormalizes the columns of `y` against an orthonormal `basis` (if any)
/// and against each other, using classical Gram-Schmidt with one full
/// reorthogonalization pass.
///
/// Returns `(Q, C, R)` with `y = basis * C + Q * R`, `Q^T Q = I`,
/// `basis^T Q = 0` and `R` upper triangular. Columns whose residual falls
/// below the rank tolerance get `R[j, j] = 0` and are completed by the first
/// canonical basis vector that still has a substantial component orthogonal
/// to everything chosen so far. Returns `None` when `basis.ncols() + y.ncols()`
/// exceeds the row count, since no such completion exists.
pub(crate) fn qr_against(
    basis: Option<&DMatrix<f64>>,
    y: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = y.nrows();
    let k = y.ncols();
    let b = basis.map_or(0, |m| m.ncols());
    if b + k > n {
        return None;
    }
    let tol = RANK_TOL_FACTOR * f64::EPSILON * y.norm();
    if k > 0 {
        if let Some(out) = block_qr_against(basis, y, tol) {
            return Some(out);
        }
    }
    let mut q = DMatrix::<f64>::zeros(n, k);
    let mut c = DMatrix::<f64>::zeros(b, k);
    let mut r = DMatrix::<f64>::zeros(k, k);

    for j in 0..k {
        let mut w: DVector<f64> = y.column(j).into_owned();
        for _ in 0..2 {
            if let Some(basis) = basis {
                let h = basis.tr_mul(&w);
                w -= basis * &h;
                let mut cj = c.column_mut(j);
                cj += h;
            }
            if j > 0 {
                let qj = q.columns(0, j);
                let g = qj.tr_mul(&w);
                w -= qj * &g;
                let mut rj = r.view_mut((0, j), (j, 1));
                rj += g;
            }
        }
        let nrm = w.norm();
        if nrm > tol && nrm > 0.0 {
            r[(j, j)] = nrm;
            q.set_column(j, &(w / nrm));
        } else {
            let fill = complete_direction(basis, &q, j, n - b - j)?;
            q.set_column(j, &fill);
        }
    }
    Some((q, c, r))
}

/// Block version of [`qr_against`] for full-rank input: two projections
/// against `basis`, each followed by a Householder QR of the block. `None`
/// when a column is dependent up to `tol`.
fn block_qr_against(
    basis: Option<&DMatrix<f64>>,
    y: &DMatrix<f64>,
    tol: f64,
) -> Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let k = y.ncols();
    let Some(basis) = basis else {
        let (q, r) = householder_qr(y);
        return (0..k).all(|j| r[(j, j)] > tol).then_some((q, DMatrix::zeros(0, k), r));
    };
    let c1 = basis.tr_mul(y);
    let (q1, r1) = householder_qr(&(y - basis * &c1));
    if !(0..k).all(|j| r1[(j, j)] > tol) {
        return None;
    }
    // y = B c1 + q1 r1 and q1 = B c2 + q r2
    let c2 = basis.tr_mul(&q1);
    let (q, r2) = householder_qr(&(&q1 - basis * &c2));
    if !(0..k).all(|j| r2[(j, j)] > 0.5) {
        return None;
    }
    Some((q, c1 + c2 * &r1, r2 * r1))
}

/// Thin Householder QR with a nonnegative diagonal in `R`.
fn householder_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = a.ncols();
    let qr = to_faer(a).qr();
    let q = qr.compute_thin_Q();
    let r = qr.thin_R();
    let mut q = DMatrix::from_fn(a.nrows(), k, |i, j| q[(i, j)]);
    let mut r = DMatrix::from_fn(k, k, |i, j| if i <= j { r[(i, j)] } else { 0.0 });
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

fn complete_direction(
    basis: Option<&DMatrix<f64>>,
    q: &DMatrix<f64>,
    j: usize,
    free_dims: usize,
) -> Option<DVector<f64>> {
    let n = q.nrows();
    // The average squared residual of e_t over all t is free_dims / n.
    let threshold = 0.5 * free_dims as f64 / n as f64;
    for t in 0..n {
        let mut w = DVector::<f64>::zeros(n);
        w[t] = 1.0;
        for _ in 0..2 {
            if let Some(basis) = basis {
                let h = basis.tr_mul(&w);
                w -= basis * h;
            }
            if j > 0 {
                let qj = q.columns(0, j);
                let g = qj.tr_mul(&w);
                w -= qj * g;
            }
        }
        let sq = w.norm_squared();
        if sq >= threshold && sq > 0.0 {
            return Some(w / sq.sqrt());
        }
    }
    None
}

/// Thin QR `Y = Q R` of an `n x r` matrix, `n >= r`.
///
/// Rank-deficient inputs are allowed: dependent columns produce a zero
/// diagonal entry in `R`, and the corresponding column of `Q` is filled from
/// the canonical basis, so `Y = 0` yields the first `r` canonical columns.
/// Diagonal entries of `R` are nonnegative.
pub fn thin_qr(y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if y.nrows() < y.ncols() {
        return Err(Error::ShapeMismatch {
            expected: (y.ncols(), y.ncols()),
            found: (y.nrows(), y.ncols()),
        });
    }
    let (q, _, r) = qr_against(None, y).expect("n >= r always admits a completion");
    Ok((q, r))
}

/// Information about the cut between kept and discarded singular values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutReport {
    /// The first discarded singular value, if the input had more than `r`.
    pub next_sigma: Option<f64>,
    /// `sigma_r` and `sigma_{r+1}` agree to `1e-12 * sigma_1`, so the kept
    /// subspace is not unique.
    pub tie: bool,
}

/// Best rank-r approximation of a dense matrix by full SVD truncation.
pub fn hard_threshold(z: &DMatrix<f64>, r: usize) -> Result<LowRankMatrix> {
    hard_threshold_report(z, r).map(|(x, _)| x)
}

pub fn hard_threshold_report(z: &DMatrix<f64>, r: usize) -> Result<(LowRankMatrix, CutReport)> {
    let k = z.nrows().min(z.ncols());
    if r == 0 || r > k {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={k} for a {}x{} matrix",
            z.nrows(),
            z.ncols()
        )));
    }
    let (u, s, v) = dense_svd(z)?;
    let next_sigma = (r < k).then(|| s[r]);
    let tie = next_sigma.is_some_and(|next| (s[r - 1] - next).abs() <= 1e-12 * s[0]);
    let x = LowRankMatrix::from_parts(
        u.columns(0, r).into_owned(),
        s.rows(0, r).into_owned(),
        v.columns(0, r).into_owned(),
    );
    Ok((x, CutReport { next_sigma, tie }))
}

/// Settings for [`truncated_svd`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedSvdOptions {
    /// Stop once `||A^T U_r - V_r S_r||_F <= tol * sigma_1`.
    pub tol: f64,
    pub max_iterations: usize,
    /// Extra block columns beyond the target rank.
    pub oversample: usize,
    /// Seed of the Gaussian starting block.
    pub seed: u64,
}

impl Default for TruncatedSvdOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 300,
            oversample: 10,
            seed: 0x5eed_5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TruncatedSvd {
    pub matrix: LowRankMatrix,
    pub iterations: usize,
    pub residual: f64,
    pub cut: CutReport,
}

/// Leading `r` singular triplets of `op` by block subspace iteration with a
/// Rayleigh-Ritz extraction at every sweep.
///
/// Each sweep costs one block product with `A` and one with `A^T` on a block
/// of `r + oversample` columns. `warm_start` (an `n_cols x j` block, typically
/// the previous right singular vectors) replaces the leading columns of the
/// random starting block.
///
/// When the block covers at least a quarter of the smaller dimension the
/// operator is formed densely and truncated directly; `iterations` is then 0.
pub fn truncated_svd(
    op: &impl LinearOperator,
    r: usize,
    opts: &TruncatedSvdOptions,
    warm_start: Option<&DMatrix<f64>>,
) -> Result<TruncatedSvd> {
    let (nr, nc) = op.shape();
    let dim = nr.min(nc);
    if r == 0 || r > dim {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={dim} for a {nr}x{nc} operator"
        )));
    }
    let block = (r + opts.oversample).min(dim);
    if 4 * block >= dim {
        // the block is a sizeable part of the space; a full SVD is cheaper
        let dense = op.apply(&DMatrix::identity(nc, nc));
        let (matrix, cut) = hard_threshold_report(&dense, r)?;
        return Ok(TruncatedSvd {
            matrix,
            iterations: 0,
            residual: 0.0,
            cut,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start = DMatrix::<f64>::zeros(nc, block);
    for j in 0..block {
        for i in 0..nc {
            start[(i, j)] = rng.sample(StandardNormal);
        }
    }
    if let Some(w) = warm_start {
        if w.nrows() != nc {
            return Err(Error::ShapeMismatch {
                expected: (nc, w.ncols()),
                found: w.shape(),
            });
        }
        let cols = w.ncols().min(block);
        start.columns_mut(0, cols).copy_from(&w.columns(0, cols));
    }
    let mut q = thin_qr(&start)?.0;

    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        let y = op.apply(&q);
        let qy = thin_qr(&y)?.0;
        let core = qy.tr_mul(&y);
        let z = op.apply_transpose(&qy);
        let (ub, s, vb) = dense_svd(&core)?;
        let ub_r = ub.columns(0, r);
        let u = &qy * ub_r;
        let v = &q * vb.columns(0, r);

        let mut diff = &z * ub_r;
        for k in 0..r {
            let mut col = diff.column_mut(k);
            col.axpy(-s[k], &v.column(k), 1.0);
        }
        residual = if s[0] > 0.0 { diff.norm() / s[0] } else { 0.0 };

        if residual <= opts.tol {
            let mut u = u;
            let mut v = v;
            normalize_signs(&mut u, &mut v);
            let next_sigma = (r < block).then(|| s[r]);
            let tie = next_sigma.is_some_and(|next| (s[r - 1] - next).abs() <= 1e-12 * s[0]);
            return Ok(TruncatedSvd {
                matrix: LowRankMatrix::from_parts(u, s.rows(0, r).into_owned(), v),
                iterations: it,
                residual,
                cut: CutReport { next_sigma, tie },
            });
        }
        q = thin_qr(&z)?.0;
    }
    Err(Error::SvdNotConverged {
        iterations: opts.max_iterations,
        residual,
    })
}

/// Gaussian factors `(L, R)` with `L: n x r` and `R: r x n`, both filled
/// column by column from one ChaCha8 stream seeded with `seed` (L first).
pub fn gaussian_factors(n: usize, r: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        DMatrix::from_vec(rows, cols, data)
    };
    let left = draw(n, r);
    let right = draw(r, n);
    (left, right)
}

/// `X = L R` for Gaussian `L` and `R` (see [`gaussian_factors`]), returned as
/// its exact reduced SVD, computed from two thin QRs and an `r x r` SVD.
pub fn random_lowrank(n: usize, r: usize, seed: u64) -> Result<LowRankMatrix> {
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
    }
    let (left, right) = gaussian_factors(n, r, seed);
    let (ql, rl) = thin_qr(&left)?;
    let (qr, rr) = thin_qr(&right.transpose())?;
    let core = rl * rr.transpose();
    let (uc, s, vc) = dense_svd(&core)?;
    let mut u = ql * uc;
    let mut v = qr * vc;
    normalize_signs(&mut u, &mut v);
    Ok(LowRankMatrix::from_parts(u, s, v))
}

/// Deterministic Gaussian matrix, used by tests and diagnostics.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    DMatrix::from_vec(rows, cols, data)
}

/// A random matrix with orthonormal columns.
pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = gaussian_matrix(rows, cols, rng);
    thin_qr(&g).expect("rows >= cols").0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn hard_threshold_diag() {
        let z = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let x = hard_threshold(&z, 1).unwrap();
        assert!((x.sigma()[0] - 3.0).abs() < 1e-15);
        assert!((x.u()[(0, 0)] - 1.0).abs() < 1e-15 && x.u()[(1, 0)].abs() < 1e-15);
        assert!((x.v()[(0, 0)] - 1.0).abs() < 1e-15 && x.v()[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn hard_threshold_rank_out_of_range() {
        let z = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            hard_threshold(&z, 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            hard_threshold(&z, 4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn hard_threshold_exact_on_low_rank() {
        let x = random_lowrank(12, 3, 4).unwrap().to_dense();
        for r in 3..=5 {
            let h = hard_threshold(&x, r).unwrap().to_dense();
            assert!(rel_err(&h, &x) <= 1e-12, "r = {r} err {}", rel_err(&h, &x));
        }
    }

    #[test]
    fn hard_threshold_matches_full_svd_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = gaussian_matrix(8, 8, &mut rng);
        // oracle: truncate nalgebra's own SVD directly
        let svd = z.clone().svd(true, true);
        let mut idx: Vec<usize> = (0..8).collect();
        idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        let mut oracle = DMatrix::zeros(8, 8);
        for &k in idx.iter().take(3) {
            oracle += svd.singular_values[k] * u.column(k) * vt.row(k);
        }
        let h = hard_threshold(&z, 3).unwrap().to_dense();
        assert!(rel_err(&h, &oracle) <= 1e-10);
    }

    #[test]
    fn hard_threshold_reports_ties() {
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0]));
        let (_, cut) = hard_threshold_report(&z, 2).unwrap();
        assert!(cut.tie);
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.5, 1.0]));
        let (_, cut) = hard_threshold_report(&z, 2).unwrap();
        assert!(!cut.tie);
        assert_eq!(cut.next_sigma, Some(1.0));
    }

    #[test]
    fn thin_qr_orthonormal_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = random_orthonormal(10, 3, &mut rng);
        let (q, r) = thin_qr(&y).unwrap();
        assert!(rel_err(&q, &y) <= 1e-14);
        assert!(rel_err(&r, &DMatrix::identity(3, 3)) <= 1e-14);
    }

    #[test]
    fn thin_qr_zero_input_uses_canonical_columns() {
        let (q, r) = thin_qr(&DMatrix::zeros(5, 3)).unwrap();
        assert_eq!(q, DMatrix::<f64>::identity(5, 3));
        assert_eq!(r, DMatrix::<f64>::zeros(3, 3));
    }

    #[test]
    fn thin_qr_random_reassembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = gaussian_matrix(10, 3, &mut rng);
        let (q, r) = thin_qr(&y).unwrap();
        assert!(rel_err(&(&q * &r), &y) <= 1e-12);
        assert!(orthonormality_error(&q) <= 1e-12);
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn thin_qr_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = gaussian_matrix(7, 1, &mut rng);
        let mut y = DMatrix::zeros(7, 3);
        y.set_column(0, &a.column(0));
        y.set_column(1, &(a.column(0) * 2.0));
        y.set_column(2, &(a.column(0) * -0.5));
        let (q, r) = thin_qr(&y).unwrap();
        assert!(rel_err(&(&q * &r), &y) <= 1e-12);
        assert!(orthonormality_error(&q) <= 1e-12);
        assert_eq!(r[(1, 1)], 0.0);
        assert_eq!(r[(2, 2)], 0.0);
    }

    #[test]
    fn thin_qr_rejects_wide() {
        assert!(thin_qr(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn random_lowrank_full_rank_and_deterministic() {
        let a = random_lowrank(4, 4, 11).unwrap();
        assert!(a.sigma().iter().all(|s| *s > 0.0));
        let b = random_lowrank(4, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = random_lowrank(4, 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_lowrank_matches_dense_product() {
        let (l, r) = gaussian_factors(50, 3, 21);
        let dense = &l * &r;
        let x = random_lowrank(50, 3, 21).unwrap();
        assert!(rel_err(&x.to_dense(), &dense) <= 1e-12);
        let (_, s, _) = dense_svd(&dense).unwrap();
        assert!(s[3] <= 1e-10 * s[0]);
        assert!(orthonormality_error(x.u()) <= 1e-12);
        assert!(orthonormality_error(x.v()) <= 1e-12);
        assert!((x.frobenius_norm() - dense.norm()).abs() <= 1e-12 * dense.norm());
    }

    #[test]
    fn spectrum_summary_examples() {
        let x = LowRankMatrix::new(
            DMatrix::identity(3, 2),
            DVector::from_vec(vec![3.0, 1.0]),
            DMatrix::identity(3, 2),
        )
        .unwrap();
        let s = spectrum_summary(&x).unwrap();
        assert_eq!((s.sigma_min, s.sigma_max, s.kappa), (1.0, 3.0, 3.0));

        let x = LowRankMatrix::new(
            DMatrix::identity(3, 2),
            DVector::from_vec(vec![5.0, 5.0]),
            DMatrix::identity(3, 2),
        )
        .unwrap();
        let s = spectrum_summary(&x).unwrap();
        assert_eq!((s.sigma_min, s.sigma_max, s.kappa), (5.0, 5.0, 1.0));

        let x = random_lowrank(20, 2, 8).unwrap();
        let (_, s, _) = dense_svd(&x.to_dense()).unwrap();
        let kappa = spectrum_summary(&x).unwrap().kappa;
        assert!((kappa - s[0] / s[1]).abs() <= 1e-12 * kappa);
    }

    #[test]
    fn spectrum_summary_degenerate() {
        let x = LowRankMatrix::from_parts(
            DMatrix::identity(3, 2),
            DVector::from_vec(vec![1.0, 0.0]),
            DMatrix::identity(3, 2),
        );
        assert!(matches!(
            spectrum_summary(&x),
            Err(Error::DegenerateRank { .. })
        ));
    }

    #[test]
    fn new_validates() {
        let u = DMatrix::identity(3, 2);
        assert!(
            LowRankMatrix::new(u.clone(), DVector::from_vec(vec![1.0, 2.0]), u.clone()).is_err()
        );
        assert!(
            LowRankMatrix::new(u.clone(), DVector::from_vec(vec![1.0, -1.0]), u.clone()).is_err()
        );
        assert!(LowRankMatrix::new(
            u.clone() * 2.0,
            DVector::from_vec(vec![2.0, 1.0]),
            u.clone()
        )
        .is_err());
        assert!(LowRankMatrix::new(u.clone(), DVector::from_vec(vec![2.0, 1.0]), u).is_ok());
    }

    #[test]
    fn truncated_svd_matches_dense() {
        let x = random_lowrank(60, 4, 2).unwrap().to_dense();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = gaussian_matrix(60, 60, &mut rng) * 0.05;
        let z = x + noise;
        let t = truncated_svd(&z, 4, &TruncatedSvdOptions::default(), None).unwrap();
        let dense = hard_threshold(&z, 4).unwrap();
        assert!(rel_err(&t.matrix.to_dense(), &dense.to_dense()) <= 1e-9);
        for k in 0..4 {
            assert!((t.matrix.sigma()[k] - dense.sigma()[k]).abs() <= 1e-10 * dense.sigma()[0]);
        }
    }

    #[test]
    fn distance_matches_dense() {
        let a = random_lowrank(15, 3, 1).unwrap();
        let b = random_lowrank(15, 2, 2).unwrap();
        let dense = (a.to_dense() - b.to_dense()).norm();
        assert!((a.distance(&b) - dense).abs() <= 1e-12 * dense);
        let mut c = a.clone();
        c.sigma[0] *= 1.0 + 1e-13;
        let tiny = (a.to_dense() - c.to_dense()).norm();
        assert!((a.distance(&c) - tiny).abs() <= 1e-3 * tiny);
    }
}
