//! Deterministic parallel Monte-Carlo plumbing.
//!
//! Trial `t` always draws from ChaCha stream `t` of the run seed, trials are
//! split into a fixed set of contiguous groups, and group partial sums are
//! merged pairwise in group order. Results are therefore bit-identical for
//! any rayon thread count.

use std::ops::Range;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{CMat, CVec};

/// Upper bound on the number of accumulation groups.
pub const MAX_GROUPS: usize = 64;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Streams above the trial range, reserved for scenario randomness.
pub const STREAM_SYMBOLS: u64 = u64::MAX;
pub const STREAM_CHANNEL: u64 = u64::MAX - 1;
pub const STREAM_PILOTS: u64 = u64::MAX - 2;

/// A seed plus substream index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    RngSpec::new(seed, trial as u64).rng()
}

/// Contiguous, nearly equal trial ranges; depends only on the inputs.
pub fn group_ranges(trials: usize, max_groups: usize) -> Vec<Range<usize>> {
    let groups = trials.min(max_groups).max(1);
    (0..groups)
        .map(|g| (g * trials / groups)..((g + 1) * trials / groups))
        .collect()
}

/// Merges adjacent pairs until one value is left.
pub fn pairwise_merge<T, F>(mut items: Vec<T>, merge: F) -> Option<T>
where
    F: Fn(T, T) -> T,
{
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut iter = items.into_iter();
        while let Some(a) = iter.next() {
            match iter.next() {
                Some(b) => next.push(merge(a, b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// First and second moments of a stream of complex vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub sum: CVec,
    pub outer: CMat,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: CVec::zeros(dim),
            outer: CMat::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, v: &CVec) {
        self.count += 1;
        self.sum += v;
        self.outer.gerc(ONE, v, v, ONE);
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.count += other.count;
        self.sum += other.sum;
        self.outer += other.outer;
        self
    }

    /// Moments with `other` removed (for leave-one-group-out estimates).
    pub fn without(&self, other: &Self) -> Self {
        Self {
            count: self.count - other.count,
            sum: &self.sum - &other.sum,
            outer: &self.outer - &other.outer,
        }
    }

    pub fn mean(&self) -> CVec {
        self.sum.unscale(self.count as f64)
    }

    /// `E[v v^H]` estimate.
    pub fn second_moment(&self) -> CMat {
        self.outer.unscale(self.count as f64)
    }

    /// Unbiased sample covariance; needs at least two samples.
    pub fn covariance(&self) -> CMat {
        let n = self.count as f64;
        let mean = self.mean();
        let centered = &self.outer - (&mean * mean.adjoint()).scale(n);
        crate::linalg::hermitian_part(&centered.unscale(n - 1.0))
    }
}

/// Group-wise and merged moments of a per-trial vector statistic.
#[derive(Debug, Clone)]
pub struct GroupedMoments {
    pub total: Moments,
    pub groups: Vec<Moments>,
}

/// Runs `trials` draws of `stat` in parallel with per-trial RNG streams.
pub fn accumulate<F>(dim: usize, trials: usize, seed: u64, stat: F) -> GroupedMoments
where
    F: Fn(&mut ChaCha8Rng) -> CVec + Sync,
{
    let groups: Vec<Moments> = group_ranges(trials, MAX_GROUPS)
        .into_par_iter()
        .map(|range| {
            let mut acc = Moments::new(dim);
            for t in range {
                let mut rng = trial_rng(seed, t);
                acc.push(&stat(&mut rng));
            }
            acc
        })
        .collect();
    let total = pairwise_merge(groups.clone(), Moments::merge).unwrap_or_else(|| Moments::new(dim));
    GroupedMoments { total, groups }
}
