//! Normal-distribution slice sampling.
//!
//! Slice indices for a scan of L slices are drawn from
//! Normal((L-1)/2, L/divisor), rounded to the nearest integer and clamped
//! into [0, L-1]: most draws land in the central part of the scan, few at
//! the top and bottom. Duplicates are allowed.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{normal, stream};

/// Slices per sampled batch (one batch = one voting round).
pub const BATCH_SIZE: usize = 8;

/// Default denominator: sigma = L/6, so +-3 sigma spans the scan.
pub const DEFAULT_SIGMA_DIVISOR: f64 = 6.0;

pub struct SliceSampler {
    sigma_divisor: f64,
    rng: ChaCha8Rng,
}

impl SliceSampler {
    /// Sampler with its own RNG stream; `sigma_divisor` must be positive.
    pub fn new(seed: u64, sigma_divisor: f64) -> Result<SliceSampler> {
        if !(sigma_divisor > 0.0) {
            return Err(Error::Config(format!(
                "sampler sigma divisor must be positive, got {sigma_divisor}"
            )));
        }
        Ok(SliceSampler {
            sigma_divisor,
            rng: stream(seed, "slice-sampler"),
        })
    }

    /// Draw one batch of slice indices for a scan with `len` slices, in draw
    /// order. Every index is in [0, len-1].
    pub fn sample_indices(&mut self, len: usize) -> Result<[usize; BATCH_SIZE]> {
        if len == 0 {
            return Err(Error::Config("cannot sample slices from an empty scan".into()));
        }
        let mean = (len as f64 - 1.0) / 2.0;
        let sigma = len as f64 / self.sigma_divisor;
        let mut out = [0usize; BATCH_SIZE];
        for slot in &mut out {
            let draw = (normal(&mut self.rng) * sigma + mean).round();
            *slot = draw.clamp(0.0, len as f64 - 1.0) as usize;
        }
        Ok(out)
    }
}

/// Mean of one round's slice scores.
pub fn batch_average(scores: &[f32]) -> f64 {
    assert_eq!(scores.len(), BATCH_SIZE, "a round scores exactly one batch");
    scores.iter().map(|&s| f64::from(s)).sum::<f64>() / BATCH_SIZE as f64
}
