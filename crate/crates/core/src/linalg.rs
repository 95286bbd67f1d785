//! Dense complex linear algebra used by every other module.
//!
//! Everything here is built on `nalgebra`'s complex SVD and Hermitian
//! eigendecomposition. Rank decisions share one cutoff: a singular value is
//! treated as zero when it does not exceed `max(m, n) * eps * sigma_max`.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{CrbError, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Largest condition number accepted before a Gram matrix counts as singular.
pub const MAX_CONDITION: f64 = 1e12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Thin SVD with singular values sorted in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    /// m x k, orthonormal columns.
    pub u: CMat,
    /// k = min(m, n) values, descending.
    pub s: Vec<f64>,
    /// k x n, orthonormal rows.
    pub vh: CMat,
}

impl Svd {
    pub fn rank(&self) -> usize {
        numerical_rank(&self.s, self.u.nrows(), self.vh.ncols())
    }

    pub fn reconstruct(&self) -> CMat {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * &self.vh
    }
}

pub fn svd(a: &CMat) -> Svd {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd {
            u: CMat::zeros(m, 0),
            s: Vec::new(),
            vh: CMat::zeros(0, n),
        };
    }
    let raw = SVD::new(a.clone(), true, true);
    let u = raw.u.expect("u requested");
    let vh = raw.v_t.expect("v_t requested");
    let s = raw.singular_values;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut su = CMat::zeros(m, k);
    let mut svh = CMat::zeros(k, n);
    let mut sorted = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        svh.set_row(dst, &vh.row(src));
        sorted.push(s[src].max(0.0));
    }
    Svd {
        u: su,
        s: sorted,
        vh: svh,
    }
}

/// Number of singular values above the shared rank cutoff.
pub fn numerical_rank(s: &[f64], m: usize, n: usize) -> usize {
    let smax = s.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let tol = m.max(n) as f64 * f64::EPSILON * smax;
    s.iter().filter(|&&v| v > tol).count()
}

pub fn rank(a: &CMat) -> usize {
    svd(a).rank()
}

/// Toeplitz matrix whose product with a length-`ncols` vector is the full
/// linear convolution with `v`. Entry (i, j) is `v[i - j]` inside the band.
pub fn conv_matrix(v: &CVec, ncols: usize) -> CMat {
    assert!(!v.is_empty(), "conv_matrix: filter must have at least one tap");
    assert!(ncols >= 1, "conv_matrix: need at least one column");
    let k = v.len();
    CMat::from_fn(k + ncols - 1, ncols, |i, j| {
        if i >= j && i - j < k {
            v[i - j]
        } else {
            ZERO
        }
    })
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn block_diag(a: &CMat, b: &CMat) -> CMat {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMat::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Orthonormal basis of the orthogonal complement of `col(A)`, so that
/// `basis^H * A = 0`. Has `m - rank(A)` columns.
pub fn left_null_basis(a: &CMat) -> CMat {
    let (m, n) = a.shape();
    if m == 0 {
        return CMat::zeros(0, 0);
    }
    if n == 0 {
        return CMat::identity(m, m);
    }
    // Pad with zero columns so the thin SVD returns a full m x m U.
    let dec = if m <= n {
        svd(a)
    } else {
        let mut padded = CMat::zeros(m, m);
        padded.view_mut((0, 0), (m, n)).copy_from(a);
        svd(&padded)
    };
    let r = numerical_rank(&dec.s, m, n);
    dec.u.columns(r, m - r).into_owned()
}

/// Orthonormal basis of `null(A)`, so that `A * basis = 0`. Has
/// `n - rank(A)` columns.
pub fn right_null_basis(a: &CMat) -> CMat {
    let (m, n) = a.shape();
    if n == 0 {
        return CMat::zeros(0, 0);
    }
    if m == 0 {
        return CMat::identity(n, n);
    }
    let dec = if n <= m {
        svd(a)
    } else {
        let mut padded = CMat::zeros(n, n);
        padded.view_mut((0, 0), (m, n)).copy_from(a);
        svd(&padded)
    };
    let r = numerical_rank(&dec.s, m, n);
    dec.vh.rows(r, n - r).adjoint()
}

/// Moore-Penrose pseudoinverse using the shared rank cutoff.
pub fn pinv(a: &CMat) -> CMat {
    let (m, n) = a.shape();
    let dec = svd(a);
    let r = dec.rank();
    let mut out = CMat::zeros(n, m);
    for k in 0..r {
        let vk = dec.vh.row(k).adjoint();
        let uk = dec.u.column(k).adjoint();
        out += (vk * uk).unscale(dec.s[k]);
    }
    out
}

pub fn condition_number(a: &CMat) -> f64 {
    let s = svd(a).s;
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// `(M + M^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Inverse of a square matrix through its SVD. Fails with the condition
/// number when it exceeds [`MAX_CONDITION`] or the matrix is rank deficient.
pub fn checked_inverse(m: &CMat) -> std::result::Result<CMat, f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "checked_inverse: matrix must be square");
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let dec = svd(m);
    let hi = dec.s[0];
    let lo = dec.s[n - 1];
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if dec.rank() < n || cond.is_nan() || cond > MAX_CONDITION {
        return Err(cond);
    }
    let mut vs = dec.vh.adjoint();
    for (j, &s) in dec.s.iter().enumerate() {
        vs.column_mut(j).unscale_mut(s);
    }
    Ok(vs * dec.u.adjoint())
}

/// Inverse of a Hermitian Gram matrix; a failure names the matrix.
pub fn gram_inverse(gram: &CMat, name: &str) -> Result<CMat> {
    checked_inverse(&hermitian_part(gram))
        .map(|inv| hermitian_part(&inv))
        .map_err(|condition| CrbError::NonIdentifiable {
            gram: name.to_string(),
            condition,
        })
}

/// Upper-left `k x k` block of `M^{-1}`, computed as the inverse of the
/// Schur complement `A - B D^+ C` of the trailing block.
pub fn upper_left_of_inverse(m: &CMat, k: usize) -> Result<CMat> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(crate::error::shape_mismatch(
            "upper_left_of_inverse",
            "square matrix",
            format!("{}x{}", n, m.ncols()),
        ));
    }
    if k > n {
        return Err(CrbError::InvalidArgument(format!(
            "block size {k} exceeds matrix size {n}"
        )));
    }
    let h = hermitian_part(m);
    let cond = condition_number(&h);
    if cond.is_nan() || cond > MAX_CONDITION {
        return Err(CrbError::NonInvertible { condition: cond });
    }
    let a = h.view((0, 0), (k, k));
    let b = h.view((0, k), (k, n - k));
    let c = h.view((k, 0), (n - k, k));
    let d = h.view((k, k), (n - k, n - k)).into_owned();
    let schur = a - b * pinv(&d) * c;
    let inv = checked_inverse(&hermitian_part(&schur))
        .map_err(|condition| CrbError::NonInvertible { condition })?;
    Ok(hermitian_part(&inv))
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(hermitian_part(m));
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Loewner order test `A >= B`: the smallest eigenvalue of `A - B` is at
/// least `-tol`.
pub fn loewner_geq(a: &CMat, b: &CMat, tol: f64) -> bool {
    assert_eq!(a.shape(), b.shape(), "loewner_geq: shape mismatch");
    min_eigenvalue(&(a - b)) >= -tol
}

/// `||a - b||_F / ||b||_F`, falling back to the absolute difference when `b`
/// vanishes.
pub fn rel_frobenius(a: &CMat, b: &CMat) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn rel_vec(a: &CVec, b: &CVec) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Deviation of `V^H V` from the identity, in Frobenius norm.
pub fn orthonormality_error(v: &CMat) -> f64 {
    let k = v.ncols();
    (v.adjoint() * v - CMat::identity(k, k)).norm()
}

/// `V V^H`.
pub fn projector(v: &CMat) -> CMat {
    v * v.adjoint()
}
