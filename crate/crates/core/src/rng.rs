//! splitmix64, the single random source used for every initialisation and test
//! vector so that streams are reproducible across implementations.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Top 53 bits of the next output mapped to `[0, 1)`.
    pub fn next_unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform sample in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        check_range(lo, hi)?;
        Ok(self.uniform_unchecked(lo, hi))
    }

    pub(crate) fn uniform_unchecked(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + self.next_unit() * (hi - lo);
        // lo + u*(hi-lo) can round up to hi when the interval is narrow
        if v >= hi {
            hi.next_down()
        } else {
            v
        }
    }
}

pub(crate) fn check_range(lo: f64, hi: f64) -> Result<()> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::Parameter(format!(
            "uniform range requires finite lo < hi, got [{lo}, {hi})"
        )));
    }
    Ok(())
}
