//! Cramér-Rao bounds for semi-blind channel estimation in redundant block
//! transmission systems.
//!
//! The channel `h` and the precoded input `x = (I_N ⊗ F) s` are estimated
//! jointly from `y = sqrt(gamma) T_h x + n`. The input is restricted by the
//! precoder range and by linear pilot constraints `A s = c`; the resulting
//! constrained Fisher information gives a lower bound on the covariance of any
//! unbiased channel estimator.
//!
//! Module map:
//! - [`linalg`]: dense complex primitives (convolution matrices, null bases,
//!   pseudoinverse, Loewner order).
//! - [`system`]: precoders, pilots, constraint bases, observation synthesis.
//! - [`crb`]: score, Fisher information and the channel bounds.
//! - [`oracle`]: finite-difference and Monte-Carlo cross-checks.
//! - [`simulate`]: estimator experiments against the bound.
//! - [`commands`]: the configuration-driven front end used by the CLI.

pub mod commands;
pub mod config;
pub mod crb;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod oracle;
pub mod report;
pub mod scenario;
pub mod simulate;
pub mod system;
pub mod textmat;

pub use error::{CrbError, Result};
pub use linalg::{CMat, CVec};
