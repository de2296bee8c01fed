//! Per-connection random shapes for packet lengths and inter-arrival times.
//!
//! Every connection draws fresh discrete distributions: a bin count uniform
//! in 1..=100, bin probabilities by sequential stick-breaking (each draw
//! uniform in the open interval below the remaining mass), then normalized
//! so the residual mass is spread proportionally. Bin values are distinct,
//! uniform over 1..=1460 bytes for lengths and 0..=99 ms for delays.

use std::time::Duration;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::framing::MAX_BODY_LEN;
use crate::handshake::MAX_HANDSHAKE_PADDING;

pub const MAX_BINS: usize = 100;
/// Delays are drawn from `0..MAX_DELAY_MS` milliseconds.
pub const MAX_DELAY_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MorphKind {
    /// Message body lengths in bytes, 1..=1460.
    Length,
    /// Pre-write sleeps in milliseconds, 0..=99.
    Delay,
}

impl MorphKind {
    fn value_range(self) -> (u32, u32) {
        match self {
            MorphKind::Length => (1, MAX_BODY_LEN as u32),
            MorphKind::Delay => (0, MAX_DELAY_MS as u32 - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphDistribution {
    kind: MorphKind,
    values: Vec<u32>,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl MorphDistribution {
    /// Builds a distribution from explicit bins, normalizing the weights.
    ///
    /// Returns `None` for empty or oversized bin sets, repeated or
    /// out-of-range values, and non-positive weights.
    pub fn from_bins(kind: MorphKind, bins: &[(u32, f64)]) -> Option<Self> {
        if bins.is_empty() || bins.len() > MAX_BINS {
            return None;
        }
        let (lo, hi) = kind.value_range();
        let mut seen = std::collections::HashSet::new();
        for &(v, w) in bins {
            if v < lo || v > hi || !(w > 0.0 && w.is_finite()) || !seen.insert(v) {
                return None;
            }
        }
        let total: f64 = bins.iter().map(|b| b.1).sum();
        let values = bins.iter().map(|b| b.0).collect();
        let probabilities: Vec<f64> = bins.iter().map(|b| b.1 / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Some(MorphDistribution { kind, values, probabilities, cumulative })
    }

    pub fn kind(&self) -> MorphKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bins(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.values.iter().copied().zip(self.probabilities.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        self.bins().map(|(v, p)| v as f64 * p).sum()
    }

    /// Inverse-CDF sampling over the cumulative weights.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.values[idx.min(self.values.len() - 1)]
    }
}

/// Draws a fresh random distribution of the given kind.
pub fn generate_distribution<R: Rng + ?Sized>(kind: MorphKind, rng: &mut R) -> MorphDistribution {
    let n = rng.random_range(1..=MAX_BINS);
    let mut remaining = 1.0f64;
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let mut w = 0.0;
        while w <= 0.0 {
            w = rng.random_range(0.0..remaining);
        }
        remaining -= w;
        weights.push(w);
    }
    let (lo, hi) = kind.value_range();
    let span = (hi - lo + 1) as usize;
    let bins: Vec<(u32, f64)> = index::sample(rng, span, n)
        .into_iter()
        .map(|i| lo + i as u32)
        .zip(weights)
        .collect();
    MorphDistribution::from_bins(kind, &bins).expect("generated bins satisfy the invariants")
}

/// Body lengths for sending `pending` bytes: split while the sample is
/// smaller than what remains, pad the final sample. Nothing for zero bytes.
pub fn morph_lengths<R: Rng + ?Sized>(
    dist: &MorphDistribution,
    pending: usize,
    rng: &mut R,
) -> Vec<usize> {
    debug_assert_eq!(dist.kind(), MorphKind::Length);
    let mut targets = Vec::new();
    let mut remaining = pending;
    while remaining > 0 {
        let len = dist.sample(rng) as usize;
        targets.push(len);
        remaining = remaining.saturating_sub(len);
    }
    targets
}

pub fn next_delay<R: Rng + ?Sized>(dist: &MorphDistribution, rng: &mut R) -> Duration {
    debug_assert_eq!(dist.kind(), MorphKind::Delay);
    Duration::from_millis(dist.sample(rng) as u64)
}

/// Derives an independent 32-byte seed for one use of a base seed.
pub fn derive_seed(base: &[u8; 32], label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(base);
    h.update((label.len() as u32).to_be_bytes());
    h.update(label.as_bytes());
    h.update(index.to_be_bytes());
    h.finalize().into()
}

/// One endpoint's shaping state for one connection.
#[derive(Debug, Clone)]
pub struct Morpher {
    lengths: MorphDistribution,
    delays: MorphDistribution,
    rng: ChaCha20Rng,
    delays_enabled: bool,
}

impl Morpher {
    /// Reproducible shapes and samples from a 32-byte seed.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let lengths = generate_distribution(MorphKind::Length, &mut rng);
        let delays = generate_distribution(MorphKind::Delay, &mut rng);
        Morpher { lengths, delays, rng, delays_enabled: true }
    }

    pub fn from_entropy() -> Self {
        let mut seed = [0u8; 32];
        crate::crypto::fill_random(&mut seed);
        Self::from_seed(seed)
    }

    /// Turns inter-arrival shaping off; every delay becomes zero.
    pub fn without_delays(mut self) -> Self {
        self.delays_enabled = false;
        self
    }

    pub fn length_distribution(&self) -> &MorphDistribution {
        &self.lengths
    }

    pub fn delay_distribution(&self) -> &MorphDistribution {
        &self.delays
    }

    pub fn sample_length(&mut self) -> usize {
        self.lengths.sample(&mut self.rng) as usize
    }

    pub fn morph_lengths(&mut self, pending: usize) -> Vec<usize> {
        morph_lengths(&self.lengths, pending, &mut self.rng)
    }

    pub fn next_delay(&mut self) -> Duration {
        if !self.delays_enabled {
            return Duration::ZERO;
        }
        next_delay(&self.delays, &mut self.rng)
    }

    /// Handshake padding: a length sample clamped to the handshake bound.
    pub fn handshake_padding(&mut self) -> usize {
        self.sample_length().min(MAX_HANDSHAKE_PADDING)
    }
}
