//! A fully specified evaluation point: dimensions, precoder, pilots,
//! channel, symbols and SNR, plus the derived constraint bases.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::crb::{self, CrbReport, Theta};
use crate::error::{CrbError, Result};
use crate::linalg::CVec;
use crate::simulate::{draw_symbols, Constellation};
use crate::system::{
    ChannelState, ConstraintBases, PilotSpec, Precoder, PrecoderKind, SourceRealization, SystemDims,
};

#[derive(Debug, Clone)]
pub struct Scenario {
    pub dims: SystemDims,
    pub precoder: Precoder,
    pub pilots: PilotSpec,
    pub bases: ConstraintBases,
    pub channel: ChannelState,
    pub source: SourceRealization,
}

impl Scenario {
    /// Checks that `s` honours the pilots and builds the constraint bases.
    pub fn new(
        dims: SystemDims,
        precoder: Precoder,
        pilots: PilotSpec,
        channel: ChannelState,
        s: CVec,
        gamma: f64,
    ) -> Result<Self> {
        let source = SourceRealization::new(s, gamma, &precoder, &dims)?;
        let residual = (&pilots.a * &source.s - &pilots.c).norm();
        if residual > 1e-10 * pilots.c.norm().max(1.0) {
            return Err(CrbError::InfeasiblePilots { residual });
        }
        let bases = ConstraintBases::build(&precoder, &pilots, &dims)?;
        Ok(Self {
            dims,
            precoder,
            pilots,
            bases,
            channel,
            source,
        })
    }

    /// Random channel and QPSK symbols; `pilot_count` randomly placed pilots
    /// whose values are the drawn symbols at those positions.
    pub fn random<R: Rng + ?Sized>(
        dims: SystemDims,
        kind: PrecoderKind,
        pilot_count: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut order: Vec<usize> = (0..dims.mn()).collect();
        order.shuffle(rng);
        Self::random_with_order(dims, kind, &order[..pilot_count.min(order.len())], gamma, rng)
    }

    pub fn random_with_order<R: Rng + ?Sized>(
        dims: SystemDims,
        kind: PrecoderKind,
        pilot_positions: &[usize],
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let precoder = Precoder::build(kind, &dims)?;
        let channel = ChannelState::random(&dims, rng);
        let s = draw_symbols(dims.mn(), Constellation::Qpsk, &PilotSpec::none(&dims), rng)?;
        let pilots = pilots_from_symbols(pilot_positions, &s, &dims)?;
        Self::new(dims, precoder, pilots, channel, s, gamma)
    }

    /// Same realization with a different pilot set (values must match `s`).
    pub fn with_pilots(&self, pilots: PilotSpec) -> Result<Self> {
        Self::new(
            self.dims,
            self.precoder.clone(),
            pilots,
            self.channel.clone(),
            self.source.s.clone(),
            self.source.gamma,
        )
    }

    /// Same realization with pilots at `positions` taking the current symbol
    /// values.
    pub fn with_pilot_positions(&self, positions: &[usize]) -> Result<Self> {
        self.with_pilots(pilots_from_symbols(positions, &self.source.s, &self.dims)?)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut out = self.clone();
        out.source = SourceRealization::new(self.source.s.clone(), gamma, &self.precoder, &self.dims)?;
        Ok(out)
    }

    pub fn gamma(&self) -> f64 {
        self.source.gamma
    }

    pub fn theta(&self) -> Theta {
        Theta {
            h: self.channel.taps.clone(),
            x: self.source.x.clone(),
        }
    }

    /// Projector-form channel bound.
    pub fn report(&self) -> Result<CrbReport> {
        crb::crb_channel_projector(&self.theta(), self.gamma(), &self.bases.e_tilde)
    }

    /// Projector-form bound with the full bound on `theta` attached.
    pub fn full_report(&self) -> Result<CrbReport> {
        crb::full_report(&self.theta(), self.gamma(), &self.bases.e, &self.bases.e_tilde)
    }
}

/// Index pilots at `positions` whose values are read from `s`.
pub fn pilots_from_symbols(positions: &[usize], s: &CVec, dims: &SystemDims) -> Result<PilotSpec> {
    let values: Vec<_> = positions
        .iter()
        .map(|&i| s.get(i).copied().ok_or(CrbError::IndexOutOfRange { index: i, len: s.len() }))
        .collect::<Result<_>>()?;
    PilotSpec::from_indices(positions, &values, dims)
}
