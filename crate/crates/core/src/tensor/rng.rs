//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator. The 64-bit experiment seed is
//! expanded into a 256-bit key with `SeedableRng::seed_from_u64` (a PCG32
//! expansion documented by `rand_core`), and the stream label selects the
//! ChaCha stream id. Draws are then converted with fixed formulas below, so
//! a `(seed, label)` pair produces the same values on every platform and
//! does not depend on `rand` distribution internals.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{Matrix, Real};
use crate::error::{Error, Result};

/// Independent purposes a stream can serve within one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamLabel {
    Init,
    Feedback,
    Dropout,
    Shuffle,
}

impl StreamLabel {
    fn stream_id(self) -> u64 {
        match self {
            StreamLabel::Init => 1,
            StreamLabel::Feedback => 2,
            StreamLabel::Dropout => 3,
            StreamLabel::Shuffle => 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    label: StreamLabel,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(label.stream_id());
        Self { seed, label, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> StreamLabel {
        self.label
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random mantissa bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-limit, limit)`.
    #[inline]
    pub fn symmetric(&mut self, limit: f64) -> f64 {
        limit * (2.0 * self.next_f64() - 1.0)
    }

    /// `true` with probability `p`.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in `[0, n)` by rejection, free of modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Matrix with entries drawn i.i.d. uniform on `[-limit, limit]`.
pub fn sample_uniform<T: Real>(
    rows: usize,
    cols: usize,
    limit: f64,
    rng: &mut SeededRng,
) -> Result<Matrix<T>> {
    if !(limit > 0.0 && limit.is_finite()) {
        return Err(Error::invalid(format!(
            "uniform limit must be positive and finite, got {limit}"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| T::from_f64(rng.symmetric(limit)))
        .collect();
    Matrix::from_vec(rows, cols, data)
}
