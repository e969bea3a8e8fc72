//! Tangent spaces of the rank-r manifold and the structured retraction.
//!
//! At `X = U S V^T` the tangent space is `{U Z1^T + Z2 V^T}`. Vectors are
//! kept in the gauge-fixed form `U M V^T + U Y1^T + Y2 V^T` with
//! `V^T Y1 = 0` and `U^T Y2 = 0`, which makes the three parts mutually
//! orthogonal in the Frobenius inner product.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dense_svd, hard_threshold_report, normalize_signs, qr_against, CutReport};
use crate::linalg::{LinearOperator, LowRankMatrix};
use crate::sampling::{apply_sampling, factored_entries, EntrySource, SamplingSet};
use crate::sparse::SparseMatrix;

/// Retraction fails when `sigma_r` of the sum drops below this fraction of
/// the larger of its own `sigma_1` and the base point's `sigma_1`.
pub const RANK_COLLAPSE_RATIO: f64 = 1e-12;

#[derive(Debug, PartialEq)]
struct Basis {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

/// The tangent space at a rank-r point, identified by its singular subspaces.
/// Cloning is cheap; vectors built from clones of one space share a base.
#[derive(Clone, Debug)]
pub struct TangentSpace(Arc<Basis>);

impl TangentSpace {
    pub fn at(x: &LowRankMatrix) -> Self {
        TangentSpace(Arc::new(Basis {
            u: x.u().clone(),
            v: x.v().clone(),
        }))
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.0.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.0.v
    }

    pub fn rank(&self) -> usize {
        self.0.u.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.0.u.nrows(), self.0.v.nrows())
    }

    pub fn same_as(&self, other: &TangentSpace) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }

    fn is_base_of(&self, x: &LowRankMatrix) -> bool {
        &self.0.u == x.u() && &self.0.v == x.v()
    }

    pub fn zero(&self) -> TangentVector {
        let r = self.rank();
        let (nr, nc) = self.shape();
        TangentVector {
            space: self.clone(),
            m: DMatrix::zeros(r, r),
            y1: DMatrix::zeros(nc, r),
            y2: DMatrix::zeros(nr, r),
        }
    }

    /// Orthogonal projection `P_T(Z) = UU^T Z + Z VV^T - UU^T Z VV^T`,
    /// touching `Z` only through one block product with `Z` and one with `Z^T`.
    pub fn project(&self, z: &impl LinearOperator) -> TangentVector {
        assert_eq!(z.shape(), self.shape(), "project: shape mismatch");
        let u = self.u();
        let v = self.v();
        let zv = z.apply(v);
        let ztu = z.apply_transpose(u);
        let m = u.tr_mul(&zv);
        let y1 = ztu - v * m.transpose();
        let y2 = zv - u * &m;
        TangentVector {
            space: self.clone(),
            m,
            y1,
            y2,
        }
    }
}

/// `U M V^T + U Y1^T + Y2 V^T` at a fixed base `(U, V)`.
#[derive(Clone, Debug)]
pub struct TangentVector {
    space: TangentSpace,
    m: DMatrix<f64>,
    y1: DMatrix<f64>,
    y2: DMatrix<f64>,
}

impl TangentVector {
    /// Builds a vector from raw parts; the parts are projected so that the
    /// stored form is canonical.
    pub fn from_parts(
        space: &TangentSpace,
        m: DMatrix<f64>,
        y1: DMatrix<f64>,
        y2: DMatrix<f64>,
    ) -> Result<Self> {
        let r = space.rank();
        let (nr, nc) = space.shape();
        if m.shape() != (r, r) {
            return Err(Error::ShapeMismatch {
                expected: (r, r),
                found: m.shape(),
            });
        }
        if y1.shape() != (nc, r) {
            return Err(Error::ShapeMismatch {
                expected: (nc, r),
                found: y1.shape(),
            });
        }
        if y2.shape() != (nr, r) {
            return Err(Error::ShapeMismatch {
                expected: (nr, r),
                found: y2.shape(),
            });
        }
        let raw = TangentVector {
            space: space.clone(),
            m,
            y1,
            y2,
        };
        Ok(space.project(&raw))
    }

    pub fn space(&self) -> &TangentSpace {
        &self.space
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn y1(&self) -> &DMatrix<f64> {
        &self.y1
    }

    pub fn y2(&self) -> &DMatrix<f64> {
        &self.y2
    }

    pub fn shape(&self) -> (usize, usize) {
        self.space.shape()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = self.space.u();
        let v = self.space.v();
        let left = u * &self.m + &self.y2;
        left * v.transpose() + u * self.y1.transpose()
    }

    /// Frobenius inner product, computed part by part.
    pub fn inner(&self, other: &TangentVector) -> Result<f64> {
        if !self.space.same_as(&other.space) {
            return Err(Error::BaseMismatch);
        }
        Ok(self.m.dot(&other.m) + self.y1.dot(&other.y1) + self.y2.dot(&other.y2))
    }

    pub fn norm(&self) -> f64 {
        (self.m.norm_squared() + self.y1.norm_squared() + self.y2.norm_squared()).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> TangentVector {
        TangentVector {
            space: self.space.clone(),
            m: &self.m * alpha,
            y1: &self.y1 * alpha,
            y2: &self.y2 * alpha,
        }
    }

    /// `self + beta * other`.
    pub fn add_scaled(&self, beta: f64, other: &TangentVector) -> Result<TangentVector> {
        if !self.space.same_as(&other.space) {
            return Err(Error::BaseMismatch);
        }
        Ok(TangentVector {
            space: self.space.clone(),
            m: &self.m + &other.m * beta,
            y1: &self.y1 + &other.y1 * beta,
            y2: &self.y2 + &other.y2 * beta,
        })
    }

    /// Factors `(A, B)` with `reconstruct() = A B^T`:
    /// `A = [U | Y2]`, `B = [V M^T + Y1 | V]`.
    fn outer_factors(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let u = self.space.u();
        let v = self.space.v();
        let r = self.space.rank();
        let (nr, nc) = self.shape();
        let mut a = DMatrix::zeros(nr, 2 * r);
        a.columns_mut(0, r).copy_from(u);
        a.columns_mut(r, r).copy_from(&self.y2);
        let mut b = DMatrix::zeros(nc, 2 * r);
        b.columns_mut(0, r).copy_from(&(v * self.m.transpose() + &self.y1));
        b.columns_mut(r, r).copy_from(v);
        (a, b)
    }
}

impl LinearOperator for TangentVector {
    fn shape(&self) -> (usize, usize) {
        self.space.shape()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let u = self.space.u();
        let vtx = self.space.v().tr_mul(x);
        u * (&self.m * &vtx + self.y1.tr_mul(x)) + &self.y2 * vtx
    }

    fn apply_transpose(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let v = self.space.v();
        let uty = self.space.u().tr_mul(y);
        v * (self.m.tr_mul(&uty) + self.y2.tr_mul(y)) + &self.y1 * uty
    }
}

impl EntrySource for TangentVector {
    fn shape(&self) -> (usize, usize) {
        self.space.shape()
    }

    fn entries_on(&self, s: &SamplingSet) -> Vec<f64> {
        let (a, b) = self.outer_factors();
        factored_entries(&a.transpose(), &b.transpose(), s)
    }
}

/// `P_T(Z)` at the point `x_l`.
pub fn project_to_tangent(x_l: &LowRankMatrix, z: &impl LinearOperator) -> Result<TangentVector> {
    crate::sampling::check_shape(x_l.shape(), z.shape())?;
    Ok(TangentSpace::at(x_l).project(z))
}

/// `P_Omega` of a tangent vector, evaluated entry by entry in `O(r)` each.
pub fn sample_tangent(s: &SamplingSet, t: &TangentVector) -> Result<SparseMatrix> {
    apply_sampling(s, t)
}

/// `H_r(X_l + T)` through a `2k x 2k` core SVD, `k = rank(X_l)`.
pub fn retract(x_l: &LowRankMatrix, t: &TangentVector, r: usize) -> Result<LowRankMatrix> {
    retract_report(x_l, t, r).map(|(x, _)| x)
}

/// [`retract`] plus the cut report of the core spectrum.
///
/// With `Y2 = U C + Q2 R2` and `Y1 = V D + Q1 R1` (any leftover components
/// along `U`, `V` are folded into the core) the sum is
/// `[U Q2] [[S + M + C + D^T, R1^T], [R2, 0]] [V Q1]^T`.
pub fn retract_report(
    x_l: &LowRankMatrix,
    t: &TangentVector,
    r: usize,
) -> Result<(LowRankMatrix, CutReport)> {
    if !t.space.is_base_of(x_l) {
        return Err(Error::BaseMismatch);
    }
    let k = x_l.rank();
    let (nr, nc) = x_l.shape();
    if r == 0 || r > (2 * k).min(nr).min(nc) {
        return Err(Error::InvalidArgument(format!(
            "retraction rank {r} outside 1..={}",
            (2 * k).min(nr).min(nc)
        )));
    }
    let u = x_l.u();
    let v = x_l.v();
    let (Some((q2, c, r2)), Some((q1, d, r1))) =
        (qr_against(Some(u), &t.y2), qr_against(Some(v), &t.y1))
    else {
        // fewer than 2k rows or columns: the sum is small enough to handle densely
        let w = x_l.to_dense() + t.reconstruct();
        let (x, cut) = hard_threshold_report(&w, r)?;
        check_collapse(x.sigma().as_slice(), r, x_l.spectral_norm())?;
        return Ok((x, cut));
    };

    let mut core = DMatrix::zeros(2 * k, 2 * k);
    let mut top_left = &t.m + c + d.transpose();
    for i in 0..k {
        top_left[(i, i)] += x_l.sigma()[i];
    }
    core.view_mut((0, 0), (k, k)).copy_from(&top_left);
    core.view_mut((0, k), (k, k)).copy_from(&r1.transpose());
    core.view_mut((k, 0), (k, k)).copy_from(&r2);

    let (uc, s, vc) = dense_svd(&core)?;
    check_collapse(s.as_slice(), r, x_l.spectral_norm())?;

    let mut left = DMatrix::zeros(nr, 2 * k);
    left.columns_mut(0, k).copy_from(u);
    left.columns_mut(k, k).copy_from(&q2);
    let mut right = DMatrix::zeros(nc, 2 * k);
    right.columns_mut(0, k).copy_from(v);
    right.columns_mut(k, k).copy_from(&q1);

    let mut u_new = left * uc.columns(0, r);
    let mut v_new = right * vc.columns(0, r);
    normalize_signs(&mut u_new, &mut v_new);
    let next_sigma = (r < s.len()).then(|| s[r]);
    let tie = next_sigma.is_some_and(|next| (s[r - 1] - next).abs() <= 1e-12 * s[0]);
    let sigma: DVector<f64> = s.rows(0, r).into_owned();
    Ok((
        LowRankMatrix::from_parts(u_new, sigma, v_new),
        CutReport { next_sigma, tie },
    ))
}

fn check_collapse(spectrum: &[f64], r: usize, base_scale: f64) -> Result<()> {
    // the base scale catches total cancellation, where sigma_1 itself is roundoff
    let top = spectrum[0].max(base_scale);
    let ratio = if top > 0.0 { spectrum[r - 1] / top } else { 0.0 };
    if !(ratio >= RANK_COLLAPSE_RATIO) {
        return Err(Error::RankCollapse {
            ratio,
            spectrum: spectrum.to_vec(),
        });
    }
    Ok(())
}
