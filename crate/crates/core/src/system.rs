//! Block transmission model: precoders, pilot constraints, the constraint
//! geometry on the channel input, and observation synthesis.
//!
//! The nuisance parameter is the unit-power channel input
//! `x = (I_N ⊗ F) s`; observations follow `y = sqrt(gamma) T_h x + n` with
//! unit-variance circular Gaussian noise.

use std::collections::HashSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, CrbError, Result};
use crate::linalg::{self, block_diag, conv_matrix, kron, CMat, CVec};

/// Block sizes: `m` symbols per block, channel order `l`, `n` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDims {
    pub m: usize,
    pub l: usize,
    pub n: usize,
}

impl SystemDims {
    pub fn new(m: usize, l: usize, n: usize) -> Result<Self> {
        if m == 0 {
            return Err(CrbError::InvalidDims("M must be at least 1".into()));
        }
        if n == 0 {
            return Err(CrbError::InvalidDims("N must be at least 1".into()));
        }
        Ok(Self { m, l, n })
    }

    /// Samples per precoded block, `M + L`.
    pub fn p(&self) -> usize {
        self.m + self.l
    }

    pub fn pn(&self) -> usize {
        self.p() * self.n
    }

    pub fn mn(&self) -> usize {
        self.m * self.n
    }

    pub fn taps(&self) -> usize {
        self.l + 1
    }

    /// Length of `theta = [h; x]`.
    pub fn theta_len(&self) -> usize {
        self.pn() + self.l + 1
    }

    /// Length of the observation `y`.
    pub fn obs_len(&self) -> usize {
        self.pn() + self.l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecoderKind {
    CpOfdm,
    ZeroPadding,
    Custom,
}

/// A `P x M` full-column-rank linear redundant precoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub f: CMat,
    pub kind: PrecoderKind,
}

/// Unitary IDFT matrix, `W[m, k] = exp(+j 2 pi m k / M) / sqrt(M)`.
pub fn idft_matrix(size: usize) -> CMat {
    let scale = 1.0 / (size as f64).sqrt();
    CMat::from_fn(size, size, |m, k| {
        let phase = 2.0 * PI * ((m * k) % size) as f64 / size as f64;
        Complex64::from_polar(scale, phase)
    })
}

impl Precoder {
    /// Cyclic-prefix OFDM: the IDFT block with its last `L` rows copied on top.
    pub fn cp_ofdm(dims: &SystemDims) -> Result<Self> {
        let (m, l) = (dims.m, dims.l);
        if l > m {
            return Err(CrbError::InvalidDims(format!(
                "cyclic prefix length L={l} exceeds block length M={m}"
            )));
        }
        let w = idft_matrix(m);
        let mut f = CMat::zeros(m + l, m);
        f.rows_mut(0, l).copy_from(&w.rows(m - l, l));
        f.rows_mut(l, m).copy_from(&w);
        Ok(Self {
            f,
            kind: PrecoderKind::CpOfdm,
        })
    }

    /// Zero padding: `[I_M; 0_{L x M}]`.
    pub fn zero_padding(dims: &SystemDims) -> Self {
        let mut f = CMat::zeros(dims.p(), dims.m);
        f.rows_mut(0, dims.m).fill_with_identity();
        Self {
            f,
            kind: PrecoderKind::ZeroPadding,
        }
    }

    /// Arbitrary precoder; must be `P x M` with full column rank.
    pub fn custom(f: CMat, dims: &SystemDims) -> Result<Self> {
        if f.shape() != (dims.p(), dims.m) {
            return Err(shape_mismatch(
                "precoder",
                format!("{}x{}", dims.p(), dims.m),
                format!("{}x{}", f.nrows(), f.ncols()),
            ));
        }
        let rank = linalg::rank(&f);
        if rank < dims.m {
            return Err(CrbError::RankDeficientPrecoder {
                rank,
                expected: dims.m,
            });
        }
        Ok(Self {
            f,
            kind: PrecoderKind::Custom,
        })
    }

    pub fn build(kind: PrecoderKind, dims: &SystemDims) -> Result<Self> {
        match kind {
            PrecoderKind::CpOfdm => Self::cp_ofdm(dims),
            PrecoderKind::ZeroPadding => Ok(Self::zero_padding(dims)),
            PrecoderKind::Custom => Err(CrbError::InvalidArgument(
                "custom precoders need an explicit matrix".into(),
            )),
        }
    }

    /// `I_N ⊗ F`.
    pub fn block(&self, blocks: usize) -> CMat {
        kron(&CMat::identity(blocks, blocks), &self.f)
    }

    /// `x = (I_N ⊗ F) s`.
    pub fn apply(&self, s: &CVec, dims: &SystemDims) -> Result<CVec> {
        if s.len() != dims.mn() {
            return Err(shape_mismatch("symbols", dims.mn(), s.len()));
        }
        let mut x = CVec::zeros(dims.pn());
        for b in 0..dims.n {
            let block = &self.f * s.rows(b * dims.m, dims.m);
            x.rows_mut(b * dims.p(), dims.p()).copy_from(&block);
        }
        Ok(x)
    }
}

/// Linear pilot constraint `A s = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSpec {
    pub a: CMat,
    pub c: CVec,
    /// Set when `A` is a row selection of the identity.
    pub indices: Option<Vec<usize>>,
}

impl PilotSpec {
    /// No pilots: fully blind.
    pub fn none(dims: &SystemDims) -> Self {
        Self {
            a: CMat::zeros(0, dims.mn()),
            c: CVec::zeros(0),
            indices: Some(Vec::new()),
        }
    }

    /// Pilots at given symbol positions; `A` keeps those rows of `I_{MN}`.
    pub fn from_indices(indices: &[usize], values: &[Complex64], dims: &SystemDims) -> Result<Self> {
        let len = dims.mn();
        if indices.len() != values.len() {
            return Err(shape_mismatch("pilot values", indices.len(), values.len()));
        }
        let mut seen = HashSet::new();
        for &index in indices {
            if index >= len {
                return Err(CrbError::IndexOutOfRange { index, len });
            }
            if !seen.insert(index) {
                return Err(CrbError::DuplicateIndex(index));
            }
        }
        let mut a = CMat::zeros(indices.len(), len);
        for (row, &index) in indices.iter().enumerate() {
            a[(row, index)] = Complex64::new(1.0, 0.0);
        }
        Ok(Self {
            a,
            c: CVec::from_column_slice(values),
            indices: Some(indices.to_vec()),
        })
    }

    /// General pilot matrix; must be `m_p x MN` with full row rank.
    pub fn from_matrix(a: CMat, c: CVec, dims: &SystemDims) -> Result<Self> {
        if a.ncols() != dims.mn() {
            return Err(shape_mismatch("pilot matrix columns", dims.mn(), a.ncols()));
        }
        if a.nrows() != c.len() {
            return Err(shape_mismatch("pilot values", a.nrows(), c.len()));
        }
        let rank = linalg::rank(&a);
        if rank < a.nrows() {
            return Err(CrbError::RankDeficientPilots {
                rank,
                expected: a.nrows(),
            });
        }
        Ok(Self { a, c, indices: None })
    }

    pub fn count(&self) -> usize {
        self.a.nrows()
    }

    /// Modifies `z` minimally so that `A s = c`. Index pilots are assigned
    /// exactly; general pilots use `s = z + A^+ (c - A z)`.
    pub fn impose(&self, z: &CVec) -> Result<CVec> {
        if z.len() != self.a.ncols() {
            return Err(shape_mismatch("symbols", self.a.ncols(), z.len()));
        }
        let mut s = z.clone();
        match &self.indices {
            Some(indices) => {
                for (&i, &v) in indices.iter().zip(self.c.iter()) {
                    s[i] = v;
                }
            }
            None => {
                s += linalg::pinv(&self.a) * (&self.c - &self.a * z);
                let residual = (&self.a * &s - &self.c).norm();
                if residual > 1e-10 * self.c.norm().max(1.0) {
                    return Err(CrbError::InfeasiblePilots { residual });
                }
            }
        }
        Ok(s)
    }
}

/// Channel impulse response `h = [h_0 .. h_L]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub taps: CVec,
}

impl ChannelState {
    pub fn new(taps: CVec, dims: &SystemDims) -> Result<Self> {
        if taps.len() != dims.taps() {
            return Err(shape_mismatch("channel taps", dims.taps(), taps.len()));
        }
        Ok(Self { taps })
    }

    /// Taps drawn i.i.d. circular Gaussian with total power one.
    pub fn random<R: Rng + ?Sized>(dims: &SystemDims, rng: &mut R) -> Self {
        let scale = 1.0 / (dims.taps() as f64).sqrt();
        let taps = crate::simulate::draw_noise(dims.taps(), rng) * Complex64::new(scale, 0.0);
        Self { taps }
    }
}

/// Unit-power source symbols, the SNR scale and the resulting channel input.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRealization {
    pub s: CVec,
    pub gamma: f64,
    pub x: CVec,
}

impl SourceRealization {
    pub fn new(s: CVec, gamma: f64, precoder: &Precoder, dims: &SystemDims) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(CrbError::InvalidArgument(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        let x = precoder.apply(&s, dims)?;
        Ok(Self { s, gamma, x })
    }
}

/// Orthonormal bases describing the constrained parameter set.
#[derive(Debug, Clone)]
pub struct ConstraintBases {
    /// `PN x (PN - MN)`, spans the complement of the precoder range.
    pub u_n: CMat,
    /// Stacked constraint Jacobian on `x`: `[U_n^H; A (I_N ⊗ F)^+]`.
    pub constraint: CMat,
    /// `PN x (MN - m_p)`, orthonormal basis of the null space of `constraint`.
    pub e_tilde: CMat,
    /// `blockdiag(I_{L+1}, e_tilde)`.
    pub e: CMat,
}

impl ConstraintBases {
    pub fn build(precoder: &Precoder, pilots: &PilotSpec, dims: &SystemDims) -> Result<Self> {
        if precoder.f.shape() != (dims.p(), dims.m) {
            return Err(shape_mismatch(
                "precoder",
                format!("{}x{}", dims.p(), dims.m),
                format!("{}x{}", precoder.f.nrows(), precoder.f.ncols()),
            ));
        }
        if pilots.a.ncols() != dims.mn() {
            return Err(shape_mismatch("pilot matrix columns", dims.mn(), pilots.a.ncols()));
        }
        let block = precoder.block(dims.n);
        let u_n = linalg::left_null_basis(&block);
        let pilot_rows = &pilots.a * linalg::pinv(&block);

        let rows = u_n.ncols() + pilot_rows.nrows();
        let mut constraint = CMat::zeros(rows, dims.pn());
        constraint
            .rows_mut(0, u_n.ncols())
            .copy_from(&u_n.adjoint());
        constraint
            .rows_mut(u_n.ncols(), pilot_rows.nrows())
            .copy_from(&pilot_rows);

        let rank = linalg::rank(&constraint);
        if rank < rows {
            return Err(CrbError::DegenerateConstraints { rank, rows });
        }
        let e_tilde = linalg::right_null_basis(&constraint);
        let e = block_diag(&CMat::identity(dims.taps(), dims.taps()), &e_tilde);
        Ok(Self {
            u_n,
            constraint,
            e_tilde,
            e,
        })
    }
}

/// Evaluates `f(theta)`: `L+1` zero rows for the unconstrained channel, then
/// `U_n^H x`, then `A (I_N ⊗ F)^+ x - c`.
pub fn constraint_residual(
    h: &CVec,
    x: &CVec,
    bases: &ConstraintBases,
    pilots: &PilotSpec,
) -> Result<CVec> {
    let pn = bases.constraint.ncols();
    if x.len() != pn {
        return Err(shape_mismatch("channel input", pn, x.len()));
    }
    let taps = h.len();
    let mut out = CVec::zeros(taps + bases.constraint.nrows());
    let mut tail = &bases.constraint * x;
    let offset = bases.u_n.ncols();
    for (k, &c) in pilots.c.iter().enumerate() {
        tail[offset + k] -= c;
    }
    out.rows_mut(taps, tail.len()).copy_from(&tail);
    Ok(out)
}

/// `y = sqrt(gamma) T_h x + n` for an explicit noise vector.
pub fn synthesize_observation(
    channel: &ChannelState,
    src: &SourceRealization,
    noise: &CVec,
) -> Result<CVec> {
    let len = src.x.len() + channel.taps.len() - 1;
    if noise.len() != len {
        return Err(shape_mismatch("noise", len, noise.len()));
    }
    let clean = conv_matrix(&channel.taps, src.x.len()) * &src.x;
    Ok(clean * Complex64::new(src.gamma.sqrt(), 0.0) + noise)
}

/// Same as [`synthesize_observation`] with noise drawn from `rng`.
pub fn synthesize_observation_with<R: Rng + ?Sized>(
    channel: &ChannelState,
    src: &SourceRealization,
    rng: &mut R,
) -> CVec {
    let len = src.x.len() + channel.taps.len() - 1;
    let noise = crate::simulate::draw_noise(len, rng);
    synthesize_observation(channel, src, &noise).expect("noise length matches")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormality_error, projector, rel_frobenius, rel_vec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn qpsk(len: usize, rng: &mut ChaCha8Rng) -> CVec {
        crate::simulate::draw_symbols(
            len,
            crate::simulate::Constellation::Qpsk,
            &PilotSpec {
                a: CMat::zeros(0, len),
                c: CVec::zeros(0),
                indices: Some(vec![]),
            },
            rng,
        )
        .unwrap()
    }

    #[test]
    fn dims_bookkeeping() {
        let d = SystemDims::new(4, 2, 3).unwrap();
        assert_eq!((d.p(), d.pn(), d.mn(), d.theta_len(), d.obs_len()), (6, 18, 12, 21, 20));
        assert!(SystemDims::new(0, 1, 1).is_err());
        assert!(SystemDims::new(1, 1, 0).is_err());
    }

    #[test]
    fn cp_ofdm_small_case() {
        let d = SystemDims::new(2, 1, 1).unwrap();
        let f = Precoder::cp_ofdm(&d).unwrap().f;
        let r = 1.0 / 2f64.sqrt();
        let expected = CMat::from_row_slice(
            3,
            2,
            &[c(r, 0.), c(-r, 0.), c(r, 0.), c(r, 0.), c(r, 0.), c(-r, 0.)],
        );
        assert!((f - expected).norm() < 1e-15);
    }

    #[test]
    fn cp_ofdm_structure() {
        for (m, l) in [(4, 2), (8, 1), (3, 3), (5, 0)] {
            let d = SystemDims::new(m, l, 1).unwrap();
            let f = Precoder::cp_ofdm(&d).unwrap().f;
            let w = idft_matrix(m);
            assert_eq!(f.rows(l, m).into_owned(), w);
            for i in 0..l {
                assert_eq!(f.row(i).into_owned(), w.row(m - l + i).into_owned());
            }
            let gram = f.adjoint() * &f;
            assert!(gram.clone().try_inverse().is_some());
            assert_eq!(linalg::rank(&f), m);
        }
        assert!(orthonormality_error(&idft_matrix(7)) < 1e-12);
        assert!(matches!(
            Precoder::cp_ofdm(&SystemDims::new(2, 3, 1).unwrap()),
            Err(CrbError::InvalidDims(_))
        ));
    }

    #[test]
    fn cp_removal_diagonalizes_channel() {
        let d = SystemDims::new(8, 3, 1).unwrap();
        let f = Precoder::cp_ofdm(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = ChannelState::random(&d, &mut rng);
        let s = qpsk(d.mn(), &mut rng);
        let x = f.apply(&s, &d).unwrap();
        let y = conv_matrix(&h.taps, d.pn()) * &x;
        let kept = y.rows(d.l, d.m).into_owned();
        let freq = idft_matrix(d.m).adjoint() * kept;
        // per-subcarrier gain is the unnormalized DFT of h at +j convention
        for k in 0..d.m {
            let gain: Complex64 = (0..=d.l)
                .map(|t| h.taps[t] * Complex64::from_polar(1.0, -2.0 * PI * (t * k) as f64 / d.m as f64))
                .sum();
            assert!((freq[k] - gain * s[k]).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_padding_inserts_zeros() {
        let d = SystemDims::new(2, 1, 3).unwrap();
        let f = Precoder::zero_padding(&d);
        assert_eq!(
            f.f,
            CMat::from_row_slice(3, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)])
        );
        let s = CVec::from_fn(6, |i, _| c(i as f64 + 1.0, 0.0));
        let x = f.apply(&s, &d).unwrap();
        let expected = [1., 2., 0., 3., 4., 0., 5., 6., 0.];
        for (v, e) in x.iter().zip(expected) {
            assert_eq!(*v, c(e, 0.0));
        }
        assert_eq!(linalg::rank(&Precoder::zero_padding(&SystemDims::new(5, 3, 1).unwrap()).f), 5);
    }

    #[test]
    fn custom_precoder_validation() {
        let d = SystemDims::new(2, 1, 1).unwrap();
        assert!(matches!(
            Precoder::custom(CMat::zeros(2, 2), &d),
            Err(CrbError::ShapeMismatch { .. })
        ));
        let mut f = CMat::zeros(3, 2);
        f[(0, 0)] = c(1.0, 0.0);
        f[(1, 0)] = c(2.0, 0.0);
        assert!(matches!(
            Precoder::custom(f, &d),
            Err(CrbError::RankDeficientPrecoder { rank: 1, expected: 2 })
        ));
    }

    #[test]
    fn pilot_spec_from_indices() {
        let d = SystemDims::new(4, 1, 1).unwrap();
        let p = PilotSpec::from_indices(&[0], &[c(1., 0.)], &d).unwrap();
        assert_eq!(p.a, CMat::from_row_slice(1, 4, &[c(1., 0.), c(0., 0.), c(0., 0.), c(0., 0.)]));
        assert_eq!(p.c[0], c(1., 0.));

        let p = PilotSpec::from_indices(&[], &[], &d).unwrap();
        assert_eq!(p.count(), 0);
        assert_eq!(p.a.ncols(), 4);

        let p = PilotSpec::from_indices(&[1, 3], &[c(1., 0.), c(0., 1.)], &d).unwrap();
        let i4 = CMat::identity(4, 4);
        assert_eq!(p.a.row(0).into_owned(), i4.row(1).into_owned());
        assert_eq!(p.a.row(1).into_owned(), i4.row(3).into_owned());

        assert_eq!(
            PilotSpec::from_indices(&[1, 1], &[c(1., 0.), c(1., 0.)], &d),
            Err(CrbError::DuplicateIndex(1))
        );
        assert_eq!(
            PilotSpec::from_indices(&[4], &[c(1., 0.)], &d),
            Err(CrbError::IndexOutOfRange { index: 4, len: 4 })
        );
    }

    #[test]
    fn pilot_matrix_must_have_full_row_rank() {
        let d = SystemDims::new(2, 1, 1).unwrap();
        let a = CMat::from_row_slice(2, 2, &[c(1., 0.), c(1., 0.), c(2., 0.), c(2., 0.)]);
        assert!(matches!(
            PilotSpec::from_matrix(a, CVec::zeros(2), &d),
            Err(CrbError::RankDeficientPilots { .. })
        ));
    }

    #[test]
    fn general_pilots_are_imposed() {
        let d = SystemDims::new(3, 1, 1).unwrap();
        let a = CMat::from_row_slice(1, 3, &[c(1., 0.), c(1., 1.), c(0., -1.)]);
        let p = PilotSpec::from_matrix(a.clone(), CVec::from_element(1, c(0.5, 0.5)), &d).unwrap();
        let s = p.impose(&CVec::from_element(3, c(1.0, 0.0))).unwrap();
        assert!((&a * &s - &p.c).norm() < 1e-12);
    }

    #[test]
    fn zero_padding_bases_by_hand() {
        let d = SystemDims::new(1, 1, 1).unwrap();
        let f = Precoder::zero_padding(&d);
        let b = ConstraintBases::build(&f, &PilotSpec::none(&d), &d).unwrap();
        let e0 = CMat::from_column_slice(2, 1, &[c(1., 0.), c(0., 0.)]);
        let e1 = CMat::from_column_slice(2, 1, &[c(0., 0.), c(1., 0.)]);
        assert!(rel_frobenius(&projector(&b.u_n), &projector(&e1)) < 1e-12);
        assert!(rel_frobenius(&projector(&b.e_tilde), &projector(&e0)) < 1e-12);
        assert_eq!(b.e.shape(), (4, 3));
    }

    #[test]
    fn all_pilots_leave_no_freedom() {
        let d = SystemDims::new(2, 1, 2).unwrap();
        let f = Precoder::cp_ofdm(&d).unwrap();
        let idx: Vec<usize> = (0..4).collect();
        let p = PilotSpec::from_indices(&idx, &[c(1., 0.); 4], &d).unwrap();
        let b = ConstraintBases::build(&f, &p, &d).unwrap();
        assert_eq!(b.e_tilde.shape(), (6, 0));
        assert_eq!(b.e.shape(), (8, 2));
    }

    #[test]
    fn cp_ofdm_bases_with_pilots() {
        let d = SystemDims::new(4, 2, 2).unwrap();
        let f = Precoder::cp_ofdm(&d).unwrap();
        let p = PilotSpec::from_indices(&[0, 3, 6], &[c(1., 0.), c(0., 1.), c(-1., 0.)], &d).unwrap();
        let b = ConstraintBases::build(&f, &p, &d).unwrap();
        assert_eq!(b.u_n.shape(), (12, 4));
        assert_eq!(b.e_tilde.shape(), (12, 5));
        assert_eq!(b.e.shape(), (15, 8));
        assert!(orthonormality_error(&b.e_tilde) < 1e-10);
        assert!(orthonormality_error(&b.u_n) < 1e-10);
        assert!((&b.constraint * &b.e_tilde).norm() < 1e-9 * b.constraint.norm());
        assert!((b.u_n.adjoint() * f.block(d.n)).norm() < 1e-10);

        // span(E~) and the conjugated row space of the constraint split C^PN
        let rows = linalg::svd(&b.constraint).vh.adjoint();
        let total = projector(&b.e_tilde) + projector(&rows);
        assert!(rel_frobenius(&total, &CMat::identity(12, 12)) < 1e-9);
    }

    #[test]
    fn degenerate_constraints_are_rejected() {
        let d = SystemDims::new(2, 1, 1).unwrap();
        let f = Precoder::zero_padding(&d);
        let a = CMat::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(1., 0.), c(0., 0.)]);
        let p = PilotSpec {
            a,
            c: CVec::zeros(2),
            indices: None,
        };
        assert!(matches!(
            ConstraintBases::build(&f, &p, &d),
            Err(CrbError::DegenerateConstraints { rank: 2, rows: 3 })
        ));
    }

    #[test]
    fn residual_vanishes_on_constraint_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..100 {
            let m = rng.random_range(1..6);
            let l = rng.random_range(0..=m.min(3));
            let n = rng.random_range(1..4);
            let d = SystemDims::new(m, l, n).unwrap();
            let f = if trial % 2 == 0 {
                Precoder::cp_ofdm(&d).unwrap()
            } else {
                Precoder::zero_padding(&d)
            };
            let k = rng.random_range(0..=d.mn());
            let idx: Vec<usize> = (0..k).collect();
            let vals = qpsk(k, &mut rng);
            let p = PilotSpec::from_indices(&idx, vals.as_slice(), &d).unwrap();
            let b = ConstraintBases::build(&f, &p, &d).unwrap();
            let s = p.impose(&qpsk(d.mn(), &mut rng)).unwrap();
            let x = f.apply(&s, &d).unwrap();
            let h = ChannelState::random(&d, &mut rng).taps;
            let r = constraint_residual(&h, &x, &b, &p).unwrap();
            assert_eq!(r.len(), d.taps() + d.pn() - d.mn() + k);
            assert!(r.norm() <= 1e-10, "trial {trial}: {}", r.norm());
        }
    }

    #[test]
    fn residual_detects_off_range_input() {
        let d = SystemDims::new(3, 1, 1).unwrap();
        let f = Precoder::zero_padding(&d);
        let p = PilotSpec::none(&d);
        let b = ConstraintBases::build(&f, &p, &d).unwrap();
        let mut x = f.apply(&CVec::from_element(3, c(1., 0.)), &d).unwrap();
        x[3] = c(0.25, 0.0);
        let h = CVec::from_element(2, c(1., 0.));
        let r = constraint_residual(&h, &x, &b, &p).unwrap();
        assert!((r[2].norm() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn residual_matches_direct_formula() {
        let d = SystemDims::new(3, 2, 2).unwrap();
        let f = Precoder::cp_ofdm(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PilotSpec::from_indices(&[1, 4], qpsk(2, &mut rng).as_slice(), &d).unwrap();
        let b = ConstraintBases::build(&f, &p, &d).unwrap();
        let x = crate::simulate::draw_noise(d.pn(), &mut rng);
        let h = crate::simulate::draw_noise(d.taps(), &mut rng);
        let r = constraint_residual(&h, &x, &b, &p).unwrap();

        // f(theta) = [[0, 0], [0, C]] theta - [0; c], with C = [U_n^H; A (I ⊗ F)^+]
        let tl = d.theta_len();
        let nrows = d.taps() + b.constraint.nrows();
        let mut jac = CMat::zeros(nrows, tl);
        jac.view_mut((d.taps(), d.taps()), b.constraint.shape()).copy_from(&b.constraint);
        let mut theta = CVec::zeros(tl);
        theta.rows_mut(0, d.taps()).copy_from(&h);
        theta.rows_mut(d.taps(), d.pn()).copy_from(&x);
        let mut offset = CVec::zeros(nrows);
        offset.rows_mut(nrows - 2, 2).copy_from(&p.c);
        let direct = jac * theta - offset;
        assert!(rel_vec(&r, &direct) < 1e-12);
    }

    #[test]
    fn observation_synthesis() {
        let d = SystemDims::new(3, 0, 1).unwrap();
        let f = Precoder::zero_padding(&d);
        let s = CVec::from_fn(3, |i, _| c(i as f64, 1.0));
        let src = SourceRealization::new(s, 1.0, &f, &d).unwrap();
        let h = ChannelState::new(CVec::from_element(1, c(1., 0.)), &d).unwrap();
        let y = synthesize_observation(&h, &src, &CVec::zeros(3)).unwrap();
        assert_eq!(y, src.x);

        let d = SystemDims::new(3, 1, 1).unwrap();
        let f = Precoder::zero_padding(&d);
        let src = SourceRealization::new(CVec::from_fn(3, |i, _| c(i as f64 + 1.0, 0.0)), 1.0, &f, &d).unwrap();
        let h = ChannelState::new(CVec::from_vec(vec![c(0., 0.), c(1., 0.)]), &d).unwrap();
        let y = synthesize_observation(&h, &src, &CVec::zeros(5)).unwrap();
        assert_eq!(y[0], c(0., 0.));
        for k in 0..4 {
            assert_eq!(y[k + 1], src.x[k]);
        }
        assert!(matches!(
            synthesize_observation(&h, &src, &CVec::zeros(4)),
            Err(CrbError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn observation_moments() {
        let d = SystemDims::new(2, 1, 1).unwrap();
        let f = Precoder::cp_ofdm(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let src = SourceRealization::new(qpsk(2, &mut rng), 3.0, &f, &d).unwrap();
        let h = ChannelState::random(&d, &mut rng);
        let mean = conv_matrix(&h.taps, d.pn()) * &src.x * Complex64::new(3f64.sqrt(), 0.0);
        let trials = 100_000;
        let mut sum = CVec::zeros(d.obs_len());
        let mut outer = CMat::zeros(d.obs_len(), d.obs_len());
        for _ in 0..trials {
            let y = synthesize_observation_with(&h, &src, &mut rng);
            let e = &y - &mean;
            sum += &y;
            outer += &e * e.adjoint();
        }
        let emp_mean = sum.unscale(trials as f64);
        let cov = outer.unscale(trials as f64);
        assert!(rel_vec(&emp_mean, &mean) < 0.03);
        assert!(rel_frobenius(&cov, &CMat::identity(4, 4)) < 0.03);
    }
}
