//! Independent numerical checks of the analytic quantities: Wirtinger
//! finite differences for the score, Monte-Carlo estimates of the Fisher
//! information and of the zero-mean score, and cross-checks between the
//! three channel-bound forms.

use std::cell::RefCell;

use num_complex::Complex64;
use serde::Serialize;

use crate::crb::{self, log_likelihood, Theta};
use crate::error::{CrbError, Result};
use crate::linalg::{self, CMat, CVec};
use crate::montecarlo::{accumulate, GroupedMoments};
use crate::simulate::draw_noise;
use crate::system::ConstraintBases;

/// Mean-score gate in units of its Monte-Carlo standard error.
pub const REGULARITY_SIGMAS: f64 = 4.0;

/// Central-difference step for Wirtinger derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    pub step: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { step: 1e-5 }
    }
}

impl FdConfig {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(CrbError::InvalidArgument(format!("step must be positive, got {step}")));
        }
        Ok(Self { step })
    }
}

/// Central-difference estimates of `(df/dz, df/dz*)` at `z`, from the real
/// and imaginary partials: `df/dz = (f_a - j f_b) / 2`, `df/dz* = (f_a + j f_b) / 2`.
pub fn wirtinger_fd<F>(f: F, z: Complex64, cfg: &FdConfig) -> (Complex64, Complex64)
where
    F: Fn(Complex64) -> Complex64,
{
    let h = cfg.step;
    let da = (f(z + Complex64::new(h, 0.0)) - f(z - Complex64::new(h, 0.0))) / (2.0 * h);
    let db = (f(z + Complex64::new(0.0, h)) - f(z - Complex64::new(0.0, h))) / (2.0 * h);
    let j = Complex64::i();
    ((da - j * db) * 0.5, (da + j * db) * 0.5)
}

/// Coordinatewise `d f / d v^*` of a real-valued function of a complex vector.
pub fn fd_conj_gradient<F>(f: F, point: &CVec, cfg: &FdConfig) -> CVec
where
    F: Fn(&CVec) -> f64,
{
    let work = RefCell::new(point.clone());
    let mut out = CVec::zeros(point.len());
    for k in 0..point.len() {
        let base = point[k];
        let (_, dconj) = wirtinger_fd(
            |z| {
                let mut v = work.borrow_mut();
                v[k] = z;
                Complex64::new(f(&v), 0.0)
            },
            base,
            cfg,
        );
        work.borrow_mut()[k] = base;
        out[k] = dconj;
    }
    out
}

/// Finite-difference score `d ln p / d theta^*`.
pub fn fd_score(y: &CVec, theta: &Theta, gamma: f64, cfg: &FdConfig) -> CVec {
    let taps = theta.taps();
    fd_conj_gradient(
        |v| log_likelihood(y, &Theta::from_stacked(v, taps), gamma),
        &theta.stacked(),
        cfg,
    )
}

/// Noise fed to the Monte-Carlo score loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseModel {
    Gaussian,
    Zero,
}

/// Moments of `score(y)` over `trials` observations `y = mean + n` at a
/// fixed parameter.
pub fn score_moments<F>(
    theta: &Theta,
    gamma: f64,
    trials: usize,
    seed: u64,
    noise: NoiseModel,
    score: F,
) -> GroupedMoments
where
    F: Fn(&CVec) -> CVec + Sync,
{
    let clean = theta.noiseless(gamma);
    let len = clean.len();
    accumulate(theta.len(), trials, seed, |rng| {
        let y = match noise {
            NoiseModel::Gaussian => &clean + draw_noise(len, rng),
            NoiseModel::Zero => clean.clone(),
        };
        score(&y)
    })
}

/// Precomputed analytic score `sqrt(gamma) G^H (y - sqrt(gamma) T_h x)`.
pub fn analytic_score(theta: &Theta, gamma: f64) -> impl Fn(&CVec) -> CVec + Sync {
    let adj = theta.jacobian().adjoint().scale(gamma.sqrt());
    let clean = theta.noiseless(gamma);
    move |y: &CVec| &adj * (y - &clean)
}

/// Monte-Carlo estimate of `J = E[v v^H]`.
pub fn mc_fim(theta: &Theta, gamma: f64, trials: usize, seed: u64) -> Result<CMat> {
    mc_fim_with(theta, gamma, trials, seed, NoiseModel::Gaussian)
}

pub fn mc_fim_with(
    theta: &Theta,
    gamma: f64,
    trials: usize,
    seed: u64,
    noise: NoiseModel,
) -> Result<CMat> {
    if trials == 0 {
        return Err(CrbError::InvalidArgument("need at least one trial".into()));
    }
    let moments = score_moments(theta, gamma, trials, seed, noise, analytic_score(theta, gamma));
    Ok(linalg::hermitian_part(&moments.total.second_moment()))
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub mean_score_norm: f64,
    pub standard_error: f64,
    pub threshold: f64,
    pub trials: usize,
    pub pass: bool,
}

/// Checks `E[v] = 0`: the sample mean of the score must stay within
/// [`REGULARITY_SIGMAS`] standard errors of zero.
pub fn check_regularity(theta: &Theta, gamma: f64, trials: usize, seed: u64) -> Result<RegularityReport> {
    check_regularity_with(theta, gamma, trials, seed, NoiseModel::Gaussian, analytic_score(theta, gamma))
}

pub fn check_regularity_with<F>(
    theta: &Theta,
    gamma: f64,
    trials: usize,
    seed: u64,
    noise: NoiseModel,
    score: F,
) -> Result<RegularityReport>
where
    F: Fn(&CVec) -> CVec + Sync,
{
    if trials < 100 {
        return Err(CrbError::InvalidArgument(format!(
            "regularity check needs at least 100 trials, got {trials}"
        )));
    }
    let moments = score_moments(theta, gamma, trials, seed, noise, score);
    Ok(regularity_from_moments(&moments))
}

pub fn regularity_from_moments(moments: &GroupedMoments) -> RegularityReport {
    let total = &moments.total;
    let mean_score_norm = total.mean().norm();
    let standard_error = (total.covariance().trace().re.max(0.0) / total.count as f64).sqrt();
    let threshold = REGULARITY_SIGMAS * standard_error;
    RegularityReport {
        mean_score_norm,
        standard_error,
        threshold,
        trials: total.count,
        pass: mean_score_norm <= threshold,
    }
}

/// Agreement between the three channel-bound forms and the trace identity.
#[derive(Debug, Clone, Serialize)]
pub struct FormComparison {
    /// `||block - projector||_F / ||projector||_F`.
    pub block_vs_projector: f64,
    pub schur_vs_projector: f64,
    /// `|trace(crb_h) - trace_bound| / trace(crb_h)`.
    pub trace_identity: f64,
}

impl FormComparison {
    pub fn max_form_deviation(&self) -> f64 {
        self.block_vs_projector.max(self.schur_vs_projector)
    }
}

pub fn compare_forms(theta: &Theta, gamma: f64, bases: &ConstraintBases) -> Result<FormComparison> {
    let proj = crb::crb_channel_projector(theta, gamma, &bases.e_tilde)?;
    let schur = crb::crb_channel_schur(theta, gamma, &bases.e_tilde)?;
    let block = crb::channel_block(&crb::crb_theta(theta, gamma, &bases.e)?, theta.taps());
    let tr = proj.crb_h.trace().re;
    Ok(FormComparison {
        block_vs_projector: linalg::rel_frobenius(&block, &proj.crb_h),
        schur_vs_projector: linalg::rel_frobenius(&schur, &proj.crb_h),
        trace_identity: (tr - proj.trace_bound).abs() / tr.abs(),
    })
}
