//! The flat key=value run configuration: one file describes the model,
//! preprocessing, sampling, voting, and training hyperparameters of a run.
//!
//! Parsing is strict — unknown keys and malformed values are errors — and
//! `to_config_string` echoes every key back in a fixed order, so the file
//! written into a run's output directory re-runs that experiment exactly.

use std::path::Path;

use crate::data::preprocess::{Enhancement, PreprocessSpec};
use crate::error::{Error, Result};
use crate::model::config::{PvtConfig, STAGES};
use crate::sampler::DEFAULT_SIGMA_DIVISOR;
use crate::train::TrainConfig;
use crate::voting::VotingConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub resolution: usize,
    pub embed_dims: [usize; STAGES],
    pub depths: [usize; STAGES],
    pub heads: [usize; STAGES],
    pub sr_ratios: [usize; STAGES],
    pub mlp_ratios: [usize; STAGES],
    pub patch_kernels: [usize; STAGES],
    pub patch_strides: [usize; STAGES],
    pub ln_eps: f32,
    pub enhancement: Enhancement,
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub checkpoint_every: usize,
    pub sigma_divisor: f64,
    pub voting_rounds: usize,
    pub val_rounds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = PvtConfig::default();
        let training = TrainConfig::default();
        RunConfig {
            seed: 42,
            resolution: model.input_resolution,
            embed_dims: model.embed_dims,
            depths: model.depths,
            heads: model.num_heads,
            sr_ratios: model.sr_ratios,
            mlp_ratios: model.mlp_ratios,
            patch_kernels: model.patch_kernels,
            patch_strides: model.patch_strides,
            ln_eps: model.ln_eps,
            enhancement: Enhancement::HistEq,
            epochs: training.epochs,
            lr: training.lr,
            weight_decay: training.weight_decay,
            checkpoint_every: training.checkpoint_every,
            sigma_divisor: DEFAULT_SIGMA_DIVISOR,
            voting_rounds: 10,
            val_rounds: training.val_rounds,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| {
        Error::Config(format!("config key {key}: cannot parse value {value:?}"))
    })
}

fn parse_stage_list(key: &str, value: &str) -> Result<[usize; STAGES]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != STAGES {
        return Err(Error::Config(format!(
            "config key {key}: expected {STAGES} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0usize; STAGES];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = parse_num(key, part)?;
    }
    Ok(out)
}

fn stage_list(values: &[usize; STAGES]) -> String {
    values.map(|v| v.to_string()).join(",")
}

impl RunConfig {
    /// Apply one key=value assignment. Used for both file lines and
    /// command-line overrides, so precedence is just application order.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "resolution" => self.resolution = parse_num(key, value)?,
            "embed_dims" => self.embed_dims = parse_stage_list(key, value)?,
            "depths" => self.depths = parse_stage_list(key, value)?,
            "heads" => self.heads = parse_stage_list(key, value)?,
            "sr_ratios" => self.sr_ratios = parse_stage_list(key, value)?,
            "mlp_ratios" => self.mlp_ratios = parse_stage_list(key, value)?,
            "patch_kernels" => self.patch_kernels = parse_stage_list(key, value)?,
            "patch_strides" => self.patch_strides = parse_stage_list(key, value)?,
            "ln_eps" => self.ln_eps = parse_num(key, value)?,
            "enhancement" => {
                self.enhancement = match value.trim() {
                    "none" => Enhancement::None,
                    "hist-eq" => Enhancement::HistEq,
                    other => {
                        return Err(Error::Config(format!(
                            "config key enhancement: expected none | hist-eq, got {other:?}"
                        )))
                    }
                }
            }
            "epochs" => self.epochs = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "weight_decay" => self.weight_decay = parse_num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "sigma_divisor" => self.sigma_divisor = parse_num(key, value)?,
            "voting_rounds" => self.voting_rounds = parse_num(key, value)?,
            "val_rounds" => self.val_rounds = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("unknown config key {other:?}")));
            }
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment;
    /// blank lines are skipped; unknown keys are errors.
    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        config.merge_str(text)?;
        Ok(config)
    }

    /// Parse `key = value` lines into an existing config.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value, got {line:?}", number + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| match e {
                    Error::Config(msg) => Error::Config(format!("line {}: {msg}", number + 1)),
                    other => other,
                })?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse_str(&text)
    }

    /// Canonical echo of every key, parseable by `parse_str`. Written into
    /// each run's output directory and checkpoint sidecars.
    pub fn to_config_string(&self) -> String {
        let enhancement = match self.enhancement {
            Enhancement::None => "none",
            Enhancement::HistEq => "hist-eq",
        };
        format!(
            "# resolved run configuration\n\
             seed = {}\n\
             \n\
             # model\n\
             resolution = {}\n\
             embed_dims = {}\n\
             depths = {}\n\
             heads = {}\n\
             sr_ratios = {}\n\
             mlp_ratios = {}\n\
             patch_kernels = {}\n\
             patch_strides = {}\n\
             ln_eps = {}\n\
             \n\
             # preprocessing\n\
             enhancement = {}\n\
             \n\
             # training\n\
             epochs = {}\n\
             lr = {}\n\
             weight_decay = {}\n\
             checkpoint_every = {}\n\
             \n\
             # sampling and voting\n\
             sigma_divisor = {}\n\
             voting_rounds = {}\n\
             val_rounds = {}\n",
            self.seed,
            self.resolution,
            stage_list(&self.embed_dims),
            stage_list(&self.depths),
            stage_list(&self.heads),
            stage_list(&self.sr_ratios),
            stage_list(&self.mlp_ratios),
            stage_list(&self.patch_kernels),
            stage_list(&self.patch_strides),
            self.ln_eps,
            enhancement,
            self.epochs,
            self.lr,
            self.weight_decay,
            self.checkpoint_every,
            self.sigma_divisor,
            self.voting_rounds,
            self.val_rounds,
        )
    }

    /// The backbone view of this config, validated.
    pub fn model_config(&self) -> Result<PvtConfig> {
        let config = PvtConfig {
            input_resolution: self.resolution,
            input_channels: 3,
            embed_dims: self.embed_dims,
            depths: self.depths,
            num_heads: self.heads,
            sr_ratios: self.sr_ratios,
            mlp_ratios: self.mlp_ratios,
            patch_kernels: self.patch_kernels,
            patch_strides: self.patch_strides,
            ln_eps: self.ln_eps,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn preprocess_spec(&self) -> PreprocessSpec {
        PreprocessSpec {
            enhancement: self.enhancement,
            resolution: self.resolution,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            val_rounds: self.val_rounds,
            sigma_divisor: self.sigma_divisor,
        }
    }

    pub fn voting(&self) -> Result<VotingConfig> {
        VotingConfig::new(self.voting_rounds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_echo() {
        let config = RunConfig::default();
        let echoed = RunConfig::parse_str(&config.to_config_string()).unwrap();
        assert_eq!(config, echoed);
    }

    #[test]
    fn non_default_values_round_trip() {
        let mut config = RunConfig::default();
        config
            .merge_str(
                "resolution = 64\nembed_dims = 8, 16, 32, 64\nlr = 0.001\n\
                 enhancement = none\nsigma_divisor = 5.5\nseed = 7\n",
            )
            .unwrap();
        assert_eq!(config.resolution, 64);
        assert_eq!(config.embed_dims, [8, 16, 32, 64]);
        assert!((config.lr - 1e-3).abs() < 1e-12);
        assert_eq!(config.enhancement, Enhancement::None);
        let echoed = RunConfig::parse_str(&config.to_config_string()).unwrap();
        assert_eq!(config, echoed);
    }

    #[test]
    fn unknown_key_is_rejected_with_its_name() {
        let err = RunConfig::parse_str("momentum = 0.9\n").unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("momentum"), "message: {msg}");
    }

    #[test]
    fn malformed_lines_report_the_line_number() {
        let err = RunConfig::parse_str("seed = 1\nnot a line\n").unwrap_err();
        assert!(format!("{err}").contains("line 2"));
        let err = RunConfig::parse_str("\n\nseed = banana\n").unwrap_err();
        assert!(format!("{err}").contains("line 3"));
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let config = RunConfig::parse_str("# a comment\n\n  seed = 9\n").unwrap();
        assert_eq!(config.seed, 9);
    }

    #[test]
    fn stage_lists_must_have_four_entries() {
        let err = RunConfig::parse_str("depths = 1,2,3\n").unwrap_err();
        assert!(format!("{err}").contains("4 comma-separated"));
    }

    #[test]
    fn enhancement_values_are_strict() {
        assert!(RunConfig::parse_str("enhancement = hist-eq\n").is_ok());
        assert!(RunConfig::parse_str("enhancement = none\n").is_ok());
        assert!(RunConfig::parse_str("enhancement = clahe\n").is_err());
    }

    #[test]
    fn views_reflect_the_merged_values() {
        let mut config = RunConfig::default();
        config
            .merge_str(
                "resolution = 64\nembed_dims = 8,16,32,64\ndepths = 1,1,1,1\n\
                 heads = 1,2,4,8\nmlp_ratios = 2,2,2,2\nepochs = 5\nlr = 0.001\n\
                 voting_rounds = 3\n",
            )
            .unwrap();
        let model = config.model_config().unwrap();
        assert_eq!(model.input_resolution, 64);
        assert_eq!(model.embed_dims, [8, 16, 32, 64]);
        let training = config.train_config();
        assert_eq!(training.epochs, 5);
        assert_eq!(config.voting().unwrap().rounds, 3);
        assert_eq!(config.preprocess_spec().resolution, 64);
    }

    #[test]
    fn invalid_model_combination_fails_at_view_time() {
        let mut config = RunConfig::default();
        // heads do not divide dims
        config.merge_str("embed_dims = 30,64,160,256\n").unwrap();
        config.merge_str("heads = 4,2,5,8\n").unwrap();
        assert!(config.model_config().is_err());
    }
}
