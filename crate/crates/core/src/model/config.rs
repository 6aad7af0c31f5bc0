//! Backbone hyperparameters and their validation.

use crate::error::{Error, Result};

pub const STAGES: usize = 4;

/// Hyperparameters of the four-stage pyramid backbone. Padding is always
/// `kernel / 2`, so odd kernels shrink each side by exactly the stride.
#[derive(Debug, Clone, PartialEq)]
pub struct PvtConfig {
    /// Side length of the square input.
    pub input_resolution: usize,
    pub input_channels: usize,
    pub embed_dims: [usize; STAGES],
    pub depths: [usize; STAGES],
    pub num_heads: [usize; STAGES],
    pub sr_ratios: [usize; STAGES],
    pub mlp_ratios: [usize; STAGES],
    pub patch_kernels: [usize; STAGES],
    pub patch_strides: [usize; STAGES],
    pub ln_eps: f32,
}

impl Default for PvtConfig {
    /// The smallest pyramid variant at the conventional 224 resolution.
    fn default() -> Self {
        PvtConfig {
            input_resolution: 224,
            input_channels: 3,
            embed_dims: [32, 64, 160, 256],
            depths: [2, 2, 2, 2],
            num_heads: [1, 2, 5, 8],
            sr_ratios: [8, 4, 2, 1],
            mlp_ratios: [8, 8, 4, 4],
            patch_kernels: [7, 3, 3, 3],
            patch_strides: [4, 2, 2, 2],
            ln_eps: 1e-6,
        }
    }
}

impl PvtConfig {
    pub fn padding(&self, stage: usize) -> usize {
        self.patch_kernels[stage] / 2
    }

    /// Feature-map side length after each stage, by the convolution output
    /// formula (kernel k, stride s, padding k/2).
    pub fn stage_sides(&self) -> Result<[usize; STAGES]> {
        let mut side = self.input_resolution;
        let mut out = [0; STAGES];
        for i in 0..STAGES {
            let (k, s, p) = (self.patch_kernels[i], self.patch_strides[i], self.padding(i));
            if side + 2 * p < k {
                return Err(Error::Config(format!(
                    "stage {i}: kernel {k} exceeds padded input side {side}"
                )));
            }
            let next = (side + 2 * p - k) / s + 1;
            if next == 0 || next != side / s || side % s != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: side {side} with kernel {k}/stride {s}/padding {p} \
                     does not reduce the grid by exactly the stride"
                )));
            }
            side = next;
            out[i] = side;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_resolution == 0 || self.input_channels == 0 {
            return Err(Error::Config("input resolution and channels must be positive".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("layer-norm epsilon must be positive".into()));
        }
        for i in 0..STAGES {
            if self.embed_dims[i] == 0
                || self.depths[i] == 0
                || self.num_heads[i] == 0
                || self.sr_ratios[i] == 0
                || self.mlp_ratios[i] == 0
            {
                return Err(Error::Config(format!("stage {i}: all sizes must be positive")));
            }
            if self.embed_dims[i] % self.num_heads[i] != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: embed dim {} not divisible by {} heads",
                    self.embed_dims[i], self.num_heads[i]
                )));
            }
            if self.patch_kernels[i] <= self.patch_strides[i] {
                return Err(Error::Config(format!(
                    "stage {i}: patch kernel {} must exceed stride {} so patches overlap",
                    self.patch_kernels[i], self.patch_strides[i]
                )));
            }
        }
        let sides = self.stage_sides()?;
        for i in 0..STAGES {
            if sides[i] % self.sr_ratios[i] != 0 {
                return Err(Error::Config(format!(
                    "stage {i}: reduction ratio {} does not divide grid side {}",
                    self.sr_ratios[i], sides[i]
                )));
            }
        }
        Ok(())
    }
}
