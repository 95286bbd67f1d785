//! TOML run configuration and its resolution into a [`Scenario`].
//!
//! Complex numbers are strings in `a+bi` form. Relative file paths are
//! resolved against the directory of the configuration file at load time.
//!
//! ```toml
//! seed = 7
//! trials = 100000
//! gamma = 10.0                     # or { start = 1, stop = 100, points = 5, scale = "log" }
//!
//! [dims]
//! m = 4
//! l = 2
//! n = 2
//!
//! [precoder]
//! kind = "cp_ofdm"                 # cp_ofdm | zero_padding | custom (+ file)
//!
//! [pilots]
//! kind = "first"                   # none | all | first (count) | indices | matrix
//! count = 3
//!
//! [channel]
//! taps = ["1+0i", "0.5-0.25i", "0.1i"]   # or seed = 3
//!
//! [symbols]
//! constellation = "qpsk"
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CrbError, Result};
use crate::linalg::CVec;
use crate::montecarlo::{RngSpec, STREAM_CHANNEL, STREAM_SYMBOLS};
use crate::scenario::Scenario;
use crate::simulate::{draw_symbols, Constellation};
use crate::system::{ChannelState, PilotSpec, Precoder, PrecoderKind, SystemDims};
use crate::textmat;

/// A complex number stored as `a+bi` text.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexValue(pub Complex64);

impl Serialize for ComplexValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&textmat::format_complex(self.0))
    }
}

impl<'de> Deserialize<'de> for ComplexValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Real(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => textmat::parse_complex(&t)
                .map(ComplexValue)
                .map_err(serde::de::Error::custom),
            Raw::Real(v) => Ok(ComplexValue(Complex64::new(v, 0.0))),
        }
    }
}

fn values(v: &[ComplexValue]) -> Vec<Complex64> {
    v.iter().map(|c| c.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    pub m: usize,
    pub l: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecoderConfig {
    pub kind: PrecoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl Default for PrecoderConfig {
    fn default() -> Self {
        Self {
            kind: PrecoderKind::CpOfdm,
            file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PilotConfig {
    /// Fully blind.
    #[default]
    None,
    /// Every symbol is a pilot.
    All,
    /// The first `count` symbols are pilots.
    First { count: usize },
    /// Pilots at explicit positions; values default to the drawn symbols.
    Indices {
        indices: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<ComplexValue>>,
    },
    /// General constraint `A s = c` with `A` read from a matrix file.
    Matrix { file: PathBuf, values: Vec<ComplexValue> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepScale {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaConfig {
    Value(f64),
    Range {
        start: f64,
        stop: f64,
        points: usize,
        #[serde(default)]
        scale: SweepScale,
    },
}

impl GammaConfig {
    pub fn single(&self) -> Result<f64> {
        match *self {
            GammaConfig::Value(g) => Ok(g),
            GammaConfig::Range { .. } => Err(CrbError::InvalidArgument(
                "a single gamma value is required here; ranges are only for sweeps".into(),
            )),
        }
    }

    /// Grid points in sweep order; a single value yields one point.
    pub fn points(&self) -> Result<Vec<f64>> {
        match *self {
            GammaConfig::Value(g) => Ok(vec![g]),
            GammaConfig::Range {
                start,
                stop,
                points,
                scale,
            } => {
                if points == 0 {
                    return Err(CrbError::InvalidArgument("gamma range needs at least one point".into()));
                }
                if !(start > 0.0 && stop > 0.0) {
                    return Err(CrbError::InvalidArgument("gamma range must be positive".into()));
                }
                if points == 1 {
                    return Ok(vec![start]);
                }
                let last = (points - 1) as f64;
                Ok((0..points)
                    .map(|i| {
                        let t = i as f64 / last;
                        match scale {
                            SweepScale::Log => start * (stop / start).powf(t),
                            SweepScale::Linear => start + (stop - start) * t,
                        }
                    })
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChannelDistribution {
    /// i.i.d. circular Gaussian taps with total power one.
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<ComplexValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub distribution: ChannelDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SymbolConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<ComplexValue>>,
    #[serde(default)]
    pub constellation: Constellation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variable", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    /// Sweep over the `gamma` range.
    Gamma,
    /// Nested pilot sets: the first `k` symbols for `k = start, start+step, .., stop`.
    Pilots {
        start: usize,
        stop: usize,
        #[serde(default = "one")]
        step: usize,
    },
    /// Same realization under each precoder kind.
    Precoder { kinds: Vec<PrecoderKind> },
}

fn one() -> usize {
    1
}

/// Deliberate faults for exercising the verification checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Score scaled by `gamma` instead of `sqrt(gamma)`.
    ScorePrefactor,
    /// `E~` scaled so its columns are no longer unit norm.
    NonOrthonormalBasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_fd_draws")]
    pub fd_draws: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inject: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            fd_step: default_fd_step(),
            fd_draws: default_fd_draws(),
            inject: None,
        }
    }
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_fd_draws() -> usize {
    5
}

fn default_trials() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub gamma: GammaConfig,
    pub dims: DimsConfig,
    #[serde(default)]
    pub precoder: PrecoderConfig,
    #[serde(default)]
    pub pilots: PilotConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub symbols: SymbolConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = toml::to_string(self).map_err(|_| fmt::Error)?;
        f.write_str(&text)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CrbError::Parse(e.to_string()))
    }

    /// Reads a file and anchors relative paths at its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CrbError::Parse(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.anchor_paths(base);
        Ok(cfg)
    }

    pub fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(file) = self.precoder.file.as_mut() {
            anchor(file);
        }
        if let PilotConfig::Matrix { file, .. } = &mut self.pilots {
            anchor(file);
        }
    }

    pub fn dims(&self) -> Result<SystemDims> {
        SystemDims::new(self.dims.m, self.dims.l, self.dims.n)
    }

    pub fn precoder(&self, dims: &SystemDims) -> Result<Precoder> {
        self.precoder_of_kind(self.precoder.kind, dims)
    }

    pub fn precoder_of_kind(&self, kind: PrecoderKind, dims: &SystemDims) -> Result<Precoder> {
        match kind {
            PrecoderKind::Custom => {
                let file = self.precoder.file.as_ref().ok_or_else(|| {
                    CrbError::InvalidArgument("custom precoder requires precoder.file".into())
                })?;
                Precoder::custom(textmat::read_matrix(file)?, dims)
            }
            other => Precoder::build(other, dims),
        }
    }

    /// Base symbol draw before pilots are imposed.
    pub fn base_symbols(&self, dims: &SystemDims) -> Result<CVec> {
        match &self.symbols.values {
            Some(v) => {
                if v.len() != dims.mn() {
                    return Err(crate::error::shape_mismatch("symbols.values", dims.mn(), v.len()));
                }
                Ok(CVec::from_vec(values(v)))
            }
            None => {
                let seed = self.symbols.seed.unwrap_or(self.seed);
                let mut rng = RngSpec::new(seed, STREAM_SYMBOLS).rng();
                draw_symbols(
                    dims.mn(),
                    self.symbols.constellation,
                    &PilotSpec::none(dims),
                    &mut rng,
                )
            }
        }
    }

    pub fn pilots(&self, base: &CVec, dims: &SystemDims) -> Result<PilotSpec> {
        self.pilots_from(&self.pilots, base, dims)
    }

    pub fn pilots_from(&self, cfg: &PilotConfig, base: &CVec, dims: &SystemDims) -> Result<PilotSpec> {
        let from_base = |idx: Vec<usize>| -> Result<PilotSpec> {
            crate::scenario::pilots_from_symbols(&idx, base, dims)
        };
        match cfg {
            PilotConfig::None => Ok(PilotSpec::none(dims)),
            PilotConfig::All => from_base((0..dims.mn()).collect()),
            PilotConfig::First { count } => {
                if *count > dims.mn() {
                    return Err(CrbError::InvalidArgument(format!(
                        "pilot count {count} exceeds symbol count {}",
                        dims.mn()
                    )));
                }
                from_base((0..*count).collect())
            }
            PilotConfig::Indices { indices, values: None } => from_base(indices.clone()),
            PilotConfig::Indices {
                indices,
                values: Some(v),
            } => PilotSpec::from_indices(indices, &values(v), dims),
            PilotConfig::Matrix { file, values: v } => {
                let a = textmat::read_matrix(file)?;
                PilotSpec::from_matrix(a, CVec::from_vec(values(v)), dims)
            }
        }
    }

    pub fn channel(&self, dims: &SystemDims) -> Result<ChannelState> {
        match &self.channel.taps {
            Some(t) => ChannelState::new(CVec::from_vec(values(t)), dims),
            None => {
                let seed = self.channel.seed.unwrap_or(self.seed);
                let mut rng = RngSpec::new(seed, STREAM_CHANNEL).rng();
                match self.channel.distribution {
                    ChannelDistribution::Gaussian => Ok(ChannelState::random(dims, &mut rng)),
                }
            }
        }
    }

    /// Builds the scenario described by the config at the given SNR.
    pub fn scenario(&self, gamma: f64) -> Result<Scenario> {
        self.scenario_with(gamma, &self.pilots, self.precoder.kind)
    }

    pub fn scenario_with(&self, gamma: f64, pilots: &PilotConfig, kind: PrecoderKind) -> Result<Scenario> {
        let dims = self.dims()?;
        let precoder = self.precoder_of_kind(kind, &dims)?;
        let base = self.base_symbols(&dims)?;
        let pilots = self.pilots_from(pilots, &base, &dims)?;
        let s = pilots.impose(&base)?;
        let channel = self.channel(&dims)?;
        Scenario::new(dims, precoder, pilots, channel, s, gamma)
    }
}
