//! Monte-Carlo harness: symbol and noise generation, the least-squares
//! channel estimator for a known input, and the all-pilot attainability
//! experiment that compares its empirical covariance with the channel bound.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crb;
use crate::error::{shape_mismatch, CrbError, Result};
use crate::linalg::{self, conv_matrix, loewner_geq, CMat, CVec};
use crate::montecarlo::{accumulate, GroupedMoments, Moments};
use crate::scenario::Scenario;
use crate::system::PilotSpec;

/// Relative Monte-Carlo error above which a run is flagged as too short.
pub const INSUFFICIENT_TRIALS_REL_ERROR: f64 = 0.2;
/// Allowed deviation of `trace(sample_cov) / trace(crb_h)` from one.
pub const TRACE_RATIO_TOL: f64 = 0.05;
/// Bias gate in units of the Monte-Carlo standard error of the mean.
pub const BIAS_SIGMAS: f64 = 4.0;
/// Loewner slack in units of the jackknife standard error.
pub const LOEWNER_SIGMAS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Constellation {
    /// `(±1 ± j) / sqrt(2)`.
    #[default]
    Qpsk,
    /// Circularly-symmetric, unit variance.
    Gaussian,
}

/// Circularly-symmetric complex Gaussian vector with identity covariance.
pub fn draw_noise<R: Rng + ?Sized>(len: usize, rng: &mut R) -> CVec {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    CVec::from_fn(len, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * scale, im * scale)
    })
}

/// Matrix with i.i.d. unit-variance circular Gaussian entries.
pub fn random_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    let v = draw_noise(rows * cols, rng);
    CMat::from_column_slice(rows, cols, v.as_slice())
}

fn draw_constellation<R: Rng + ?Sized>(len: usize, constellation: Constellation, rng: &mut R) -> CVec {
    match constellation {
        Constellation::Qpsk => {
            let a = std::f64::consts::FRAC_1_SQRT_2;
            CVec::from_fn(len, |_, _| {
                let re = if rng.random::<bool>() { a } else { -a };
                let im = if rng.random::<bool>() { a } else { -a };
                Complex64::new(re, im)
            })
        }
        Constellation::Gaussian => draw_noise(len, rng),
    }
}

/// Unit-power symbols satisfying the pilot constraint `A s = c`.
pub fn draw_symbols<R: Rng + ?Sized>(
    len: usize,
    constellation: Constellation,
    pilots: &PilotSpec,
    rng: &mut R,
) -> Result<CVec> {
    let z = draw_constellation(len, constellation, rng);
    pilots.impose(&z)
}

/// Least-squares channel estimate from a known channel input:
/// `(T_x^H T_x)^{-1} T_x^H y / sqrt(gamma)`.
#[derive(Debug, Clone)]
pub struct LsEstimator {
    left_inverse: CMat,
    taps: usize,
}

impl LsEstimator {
    pub fn new(x_known: &CVec, taps: usize, gamma: f64) -> Result<Self> {
        if taps == 0 || x_known.is_empty() {
            return Err(CrbError::InvalidArgument("empty channel or input".into()));
        }
        let tx = conv_matrix(x_known, taps);
        let gram_inv = linalg::gram_inverse(&tx.ad_mul(&tx), "T_x^H T_x")?;
        let left_inverse = (gram_inv * tx.adjoint()).unscale(gamma.sqrt());
        Ok(Self { left_inverse, taps })
    }

    pub fn estimate(&self, y: &CVec) -> Result<CVec> {
        if y.len() != self.left_inverse.ncols() {
            return Err(shape_mismatch("observation", self.left_inverse.ncols(), y.len()));
        }
        Ok(&self.left_inverse * y)
    }

    pub fn taps(&self) -> usize {
        self.taps
    }
}

/// One-shot form of [`LsEstimator`]; the channel order is inferred from
/// `len(y) - len(x)`.
pub fn ls_channel_estimator(y: &CVec, x_known: &CVec, gamma: f64) -> Result<CVec> {
    if y.len() < x_known.len() {
        return Err(shape_mismatch("observation", format!(">= {}", x_known.len()), y.len()));
    }
    let taps = y.len() - x_known.len() + 1;
    LsEstimator::new(x_known, taps, gamma)?.estimate(y)
}

/// Empirical summary of channel estimates around the true channel.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalStats {
    #[serde(serialize_with = "crate::report::ser_cvec")]
    pub mean_estimate: CVec,
    #[serde(serialize_with = "crate::report::ser_cmat")]
    pub sample_cov: CMat,
    pub trials: usize,
    pub bias_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttainabilityReport {
    pub stats: EmpiricalStats,
    #[serde(serialize_with = "crate::report::ser_cmat")]
    pub crb_h: CMat,
    pub crb_trace: f64,
    pub trace_ratio: f64,
    /// Jackknife standard error of `sample_cov` (Frobenius).
    pub cov_std_error: f64,
    /// Jackknife standard error of `trace(sample_cov)`.
    pub trace_std_error: f64,
    /// Standard error of the mean estimate, `sqrt(trace(sample_cov) / trials)`.
    pub bias_std_error: f64,
    pub trace_pass: bool,
    pub bias_pass: bool,
    pub loewner_pass: bool,
    pub insufficient_trials: bool,
    pub pass: bool,
}

/// Leave-one-group-out jackknife standard errors of the sample covariance
/// (Frobenius) and of its trace.
pub fn jackknife_cov_errors(moments: &GroupedMoments) -> (f64, f64) {
    let g = moments.groups.len();
    if g < 2 || moments.total.count < 3 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let loo: Vec<CMat> = moments
        .groups
        .iter()
        .map(|grp| moments.total.without(grp))
        .filter(|m| m.count >= 2)
        .map(|m: Moments| m.covariance())
        .collect();
    if loo.len() < 2 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let k = loo.len() as f64;
    let dim = loo[0].nrows();
    let mean = loo.iter().fold(CMat::zeros(dim, dim), |acc, c| acc + c).unscale(k);
    let mean_trace = mean.trace().re;
    let factor = (k - 1.0) / k;
    let frob = loo.iter().map(|c| (c - &mean).norm_squared()).sum::<f64>();
    let tr = loo.iter().map(|c| (c.trace().re - mean_trace).powi(2)).sum::<f64>();
    ((factor * frob).sqrt(), (factor * tr).sqrt())
}

/// Draws `trials` noise realizations for an all-pilot scenario, runs the LS
/// estimator on each, and compares the empirical covariance with the bound.
pub fn run_attainability_experiment(
    scenario: &Scenario,
    trials: usize,
    seed: u64,
) -> Result<AttainabilityReport> {
    let dims = scenario.dims;
    if scenario.pilots.count() != dims.mn() {
        return Err(CrbError::InvalidArgument(format!(
            "attainability needs every symbol piloted ({} of {})",
            scenario.pilots.count(),
            dims.mn()
        )));
    }
    if trials < 2 {
        return Err(CrbError::InvalidArgument("need at least two trials".into()));
    }
    let gamma = scenario.gamma();
    let theta = scenario.theta();
    let report = crb::crb_channel_projector(&theta, gamma, &scenario.bases.e_tilde)?;
    let estimator = LsEstimator::new(&theta.x, dims.taps(), gamma)?;
    let clean = theta.noiseless(gamma);
    let h = theta.h.clone();
    let obs_len = clean.len();

    let moments = accumulate(dims.taps(), trials, seed, |rng| {
        let y = &clean + draw_noise(obs_len, rng);
        estimator.estimate(&y).expect("observation length matches") - &h
    });

    let deviation = moments.total.mean();
    let sample_cov = moments.total.covariance();
    let bias_norm = deviation.norm();
    let crb_trace = report.crb_h.trace().re;
    let trace_ratio = sample_cov.trace().re / crb_trace;
    let (cov_std_error, trace_std_error) = jackknife_cov_errors(&moments);
    let bias_std_error = (sample_cov.trace().re / trials as f64).sqrt();

    let taps = dims.taps();
    let slack = CMat::identity(taps, taps).scale(LOEWNER_SIGMAS * cov_std_error);
    let loewner_pass = cov_std_error.is_finite() && loewner_geq(&(&sample_cov + slack), &report.crb_h, 0.0);
    let trace_pass = (trace_ratio - 1.0).abs() <= TRACE_RATIO_TOL;
    let bias_pass = bias_norm <= BIAS_SIGMAS * bias_std_error;
    let insufficient_trials = {
        let rel = trace_std_error / crb_trace;
        rel.is_nan() || rel > INSUFFICIENT_TRIALS_REL_ERROR
    };

    Ok(AttainabilityReport {
        stats: EmpiricalStats {
            mean_estimate: &h + deviation,
            sample_cov,
            trials,
            bias_norm,
        },
        crb_h: report.crb_h,
        crb_trace,
        trace_ratio,
        cov_std_error,
        trace_std_error,
        bias_std_error,
        trace_pass,
        bias_pass,
        loewner_pass,
        insufficient_trials,
        pass: trace_pass && bias_pass && loewner_pass,
    })
}
