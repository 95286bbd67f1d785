//! Score, Fisher information and Cramér-Rao bounds for `theta = [h; x]`.
//!
//! The channel bound is available in three algebraically equivalent forms:
//! block extraction from the full constrained bound, a Schur complement of
//! the constrained information, and an orthogonal-projector form whose Gram
//! factor also yields the singular-value trace bound.

use num_complex::Complex64;

use crate::error::{shape_mismatch, CrbError, Result};
use crate::linalg::{self, conv_matrix, gram_inverse, CMat, CVec};
use crate::system::SystemDims;

/// Full parameter `theta = [h; x]`; the channel input `x` is a nuisance.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub h: CVec,
    pub x: CVec,
}

impl Theta {
    pub fn new(h: CVec, x: CVec, dims: &SystemDims) -> Result<Self> {
        if h.len() != dims.taps() {
            return Err(shape_mismatch("channel taps", dims.taps(), h.len()));
        }
        if x.len() != dims.pn() {
            return Err(shape_mismatch("channel input", dims.pn(), x.len()));
        }
        Ok(Self { h, x })
    }

    pub fn len(&self) -> usize {
        self.h.len() + self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn taps(&self) -> usize {
        self.h.len()
    }

    pub fn stacked(&self) -> CVec {
        let mut v = CVec::zeros(self.len());
        v.rows_mut(0, self.h.len()).copy_from(&self.h);
        v.rows_mut(self.h.len(), self.x.len()).copy_from(&self.x);
        v
    }

    /// Splits a stacked vector with `taps` leading channel entries.
    pub fn from_stacked(v: &CVec, taps: usize) -> Self {
        Self {
            h: v.rows(0, taps).into_owned(),
            x: v.rows(taps, v.len() - taps).into_owned(),
        }
    }

    /// `T_x`, `(PN + L) x (L + 1)`.
    pub fn t_x(&self) -> CMat {
        conv_matrix(&self.x, self.h.len())
    }

    /// `T_h`, `(PN + L) x PN`.
    pub fn t_h(&self) -> CMat {
        conv_matrix(&self.h, self.x.len())
    }

    /// `G = [T_x  T_h]`, the Jacobian of the noiseless observation with
    /// respect to `theta` (up to `sqrt(gamma)`).
    pub fn jacobian(&self) -> CMat {
        let tx = self.t_x();
        let th = self.t_h();
        let mut g = CMat::zeros(tx.nrows(), self.len());
        g.columns_mut(0, tx.ncols()).copy_from(&tx);
        g.columns_mut(tx.ncols(), th.ncols()).copy_from(&th);
        g
    }

    pub fn noiseless(&self, gamma: f64) -> CVec {
        self.t_h() * &self.x * Complex64::new(gamma.sqrt(), 0.0)
    }

    pub fn obs_len(&self) -> usize {
        self.x.len() + self.h.len() - 1
    }
}

/// Log-likelihood up to an additive constant: `-||y - sqrt(gamma) T_h x||^2`.
pub fn log_likelihood(y: &CVec, theta: &Theta, gamma: f64) -> f64 {
    -(y - theta.noiseless(gamma)).norm_squared()
}

/// Complex score `d ln p / d theta^*` = `sqrt(gamma) G^H n`.
pub fn score(y: &CVec, theta: &Theta, gamma: f64) -> Result<CVec> {
    if y.len() != theta.obs_len() {
        return Err(shape_mismatch("observation", theta.obs_len(), y.len()));
    }
    let n = y - theta.noiseless(gamma);
    Ok(theta.jacobian().ad_mul(&n) * Complex64::new(gamma.sqrt(), 0.0))
}

/// Complex Fisher information `J = gamma G^H G`.
#[derive(Debug, Clone)]
pub struct FimReport {
    pub j: CMat,
    pub gamma: f64,
}

pub fn fim(theta: &Theta, gamma: f64) -> FimReport {
    let g = theta.jacobian();
    let j = linalg::hermitian_part(&g.ad_mul(&g)).scale(gamma);
    FimReport { j, gamma }
}

/// `J^{-1}`. Singular information (the blind scalar ambiguity) is reported
/// as `NonIdentifiable`.
pub fn crb_unconstrained(fim: &FimReport) -> Result<CMat> {
    gram_inverse(&fim.j, "J")
}

/// `U (U^H J U)^{-1} U^H` for an orthonormal complement `U`.
pub fn crb_constrained(j: &CMat, u: &CMat) -> Result<CMat> {
    if u.nrows() != j.nrows() {
        return Err(shape_mismatch("complement rows", j.nrows(), u.nrows()));
    }
    if u.ncols() == 0 {
        return Ok(CMat::zeros(j.nrows(), j.nrows()));
    }
    let reduced = u.ad_mul(&(j * u));
    let inv = gram_inverse(&reduced, "U^H J U")?;
    Ok(linalg::hermitian_part(&(u * inv * u.adjoint())))
}

/// Bound on the whole parameter, `E (E^H J E)^{-1} E^H`.
pub fn crb_theta(theta: &Theta, gamma: f64, e: &CMat) -> Result<CMat> {
    let info = fim(theta, gamma);
    crb_constrained(&info.j, e).map_err(|err| rename_gram(err, "E^H J E"))
}

/// Upper-left `(L+1) x (L+1)` block of a bound on `theta`.
pub fn channel_block(crb: &CMat, taps: usize) -> CMat {
    crb.view((0, 0), (taps, taps)).into_owned()
}

/// Schur-complement form:
/// `(1/gamma) {T_x^H [I - T_h E~ (E~^H T_h^H T_h E~)^+ E~^H T_h^H] T_x}^{-1}`.
pub fn crb_channel_schur(theta: &Theta, gamma: f64, e_tilde: &CMat) -> Result<CMat> {
    check_complement(theta, e_tilde)?;
    let tx = theta.t_x();
    let the = theta.t_h() * e_tilde;
    let rows = tx.nrows();
    let inner = linalg::pinv(&the.ad_mul(&the));
    let complement = CMat::identity(rows, rows) - &the * inner * the.adjoint();
    let gram = tx.ad_mul(&(complement * &tx));
    Ok(gram_inverse(&gram, "T_x^H (I - P) T_x")?.unscale(gamma))
}

/// Channel bound with its singular-value summary.
#[derive(Debug, Clone)]
pub struct CrbReport {
    pub crb_theta: Option<CMat>,
    pub crb_h: CMat,
    pub trace_bound: f64,
    /// Singular values of `T_x^H U~`, descending.
    pub singular_values: Vec<f64>,
    pub gamma: f64,
}

/// Projector form `(1/gamma) (T_x^H U~ U~^H T_x)^{-1}`, where `U~` spans the
/// orthogonal complement of `col(T_h E~)`.
pub fn crb_channel_projector(theta: &Theta, gamma: f64, e_tilde: &CMat) -> Result<CrbReport> {
    check_complement(theta, e_tilde)?;
    let the = theta.t_h() * e_tilde;
    let u_tilde = linalg::left_null_basis(&the);
    projector_report(theta, gamma, &u_tilde)
}

/// Projector form for a caller-supplied `U~`.
pub fn projector_report(theta: &Theta, gamma: f64, u_tilde: &CMat) -> Result<CrbReport> {
    let k = theta.t_x().ad_mul(u_tilde);
    let gram = &k * k.adjoint();
    let crb_h = gram_inverse(&gram, "T_x^H U~ U~^H T_x")?.unscale(gamma);
    let singular_values = linalg::svd(&k).s;
    let trace_bound = trace_bound(&singular_values, gamma, theta.taps() - 1)?;
    Ok(CrbReport {
        crb_theta: None,
        crb_h,
        trace_bound,
        singular_values,
        gamma,
    })
}

/// `(1/gamma) sum_{l=0}^{L} sigma_l^{-2}` over the `L+1` largest values.
pub fn trace_bound(singular_values: &[f64], gamma: f64, l: usize) -> Result<f64> {
    let needed = l + 1;
    let mut sorted: Vec<f64> = singular_values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let positive = sorted.iter().take_while(|&&s| s > 0.0).count();
    if positive < needed {
        return Err(CrbError::NonIdentifiable {
            gram: format!("{positive} positive singular values for {needed} channel taps"),
            condition: f64::INFINITY,
        });
    }
    Ok(sorted[..needed].iter().map(|s| s.powi(-2)).sum::<f64>() / gamma)
}

/// Projector-form report with the full bound on `theta` attached.
pub fn full_report(theta: &Theta, gamma: f64, e: &CMat, e_tilde: &CMat) -> Result<CrbReport> {
    let mut report = crb_channel_projector(theta, gamma, e_tilde)?;
    report.crb_theta = Some(crb_theta(theta, gamma, e)?);
    Ok(report)
}

fn check_complement(theta: &Theta, e_tilde: &CMat) -> Result<()> {
    if e_tilde.nrows() != theta.x.len() {
        return Err(shape_mismatch("E~ rows", theta.x.len(), e_tilde.nrows()));
    }
    Ok(())
}

fn rename_gram(err: CrbError, name: &str) -> CrbError {
    match err {
        CrbError::NonIdentifiable { condition, .. } => CrbError::NonIdentifiable {
            gram: name.to_string(),
            condition,
        },
        other => other,
    }
}
