//! Training loop: one case per optimization step, its 8 sampled slices
//! forming the batch, MSE toward ±1 targets, AdamW updates. Cases are
//! reshuffled and slices resampled every epoch.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::data::preprocess::{batch_tensor, load_gray, preprocess_plane, PreprocessSpec};
use crate::data::{Label, ScanCase};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::PvtModel;
use crate::rng::{stream, subseed};
use crate::sampler::{SliceSampler, BATCH_SIZE};
use crate::tensor::ops::mse_loss;
use crate::tensor::optim::AdamW;
use crate::tensor::tape::{backward, Tape};
use crate::tensor::{checkpoint, Tensor};
use crate::voting::VotingConfig;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// Extra `epoch-NNN` checkpoints every this many epochs; 0 disables the
    /// cadence (best/last are always written when a sink is given).
    pub checkpoint_every: usize,
    /// Voting rounds for the per-epoch validation pass (the final
    /// evaluation uses its own, typically larger, round count).
    pub val_rounds: usize,
    pub sigma_divisor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr: 1e-4,
            weight_decay: 0.01,
            seed: 42,
            checkpoint_every: 0,
            val_rounds: 3,
            sigma_divisor: crate::sampler::DEFAULT_SIGMA_DIVISOR,
        }
    }
}

impl TrainConfig {
    /// lr = 0 is legal (a deliberate optimizer fixed point); negatives and
    /// non-finite values are not.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("training needs at least one epoch".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight decay must be finite and non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.val_rounds == 0 {
            return Err(Error::Config("validation needs at least one voting round".into()));
        }
        if !(self.sigma_divisor > 0.0) {
            return Err(Error::Config("sigma divisor must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_macro_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<EpochStats>,
    pub steps: usize,
    pub best_epoch: Option<usize>,
    pub best_val_macro_f1: Option<f64>,
}

impl TrainOutcome {
    /// Loss curve as CSV: epoch,mean_loss,val_macro_f1 (last field empty
    /// when no validation ran). Stable formatting for byte-exact replays.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss,val_macro_f1\n");
        for row in &self.curve {
            let val = row
                .val_macro_f1
                .map(|v| v.to_string())
                .unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", row.epoch, row.mean_loss, val));
        }
        out
    }
}

/// Where checkpoints go. Every checkpoint gets a `<name>.config.txt`
/// sidecar holding the resolved run configuration, so `eval`/`predict`
/// can rebuild the architecture from the checkpoint alone.
pub struct CheckpointSink {
    pub dir: PathBuf,
    pub sidecar: String,
}

impl CheckpointSink {
    pub fn new(dir: &Path, sidecar: &str) -> CheckpointSink {
        CheckpointSink {
            dir: dir.to_path_buf(),
            sidecar: sidecar.to_string(),
        }
    }

    fn save(&self, model: &PvtModel, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.dir.join(format!("{name}.ckpt"));
        checkpoint::save(&path, &model.named_params())?;
        let sidecar_path = self.dir.join(format!("{name}.ckpt.config.txt"));
        std::fs::write(&sidecar_path, &self.sidecar).map_err(|e| Error::io(&sidecar_path, e))?;
        Ok(path)
    }
}

/// Sidecar path convention for a checkpoint file.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".config.txt");
    checkpoint.with_file_name(name)
}

fn training_batch(
    case: &ScanCase,
    sampler: &mut SliceSampler,
    pre: &PreprocessSpec,
) -> Result<(Tensor, Tensor)> {
    let indices = sampler.sample_indices(case.len())?;
    // decode each distinct slice once per step
    let mut planes: Vec<(usize, Vec<f32>)> = Vec::new();
    for idx in indices {
        if !planes.iter().any(|(i, _)| *i == idx) {
            let path = &case.slice_paths[idx];
            let (img, h, w) = load_gray(path)
                .map_err(|e| Error::Format(format!("case {}: {e}", case.case_id)))?;
            planes.push((idx, preprocess_plane(&img, h, w, pre)?));
        }
    }
    let refs: Vec<&[f32]> = indices
        .iter()
        .map(|idx| {
            planes
                .iter()
                .find(|(i, _)| i == idx)
                .map(|(_, p)| p.as_slice())
                .expect("plane decoded above")
        })
        .collect();
    let batch = batch_tensor(&refs, pre.resolution);
    let target_value = match case.label {
        Label::Positive => 1.0f32,
        Label::Negative => -1.0f32,
        Label::Unknown => unreachable!("unlabeled cases are filtered before training"),
    };
    Ok((batch, Tensor::full(&[BATCH_SIZE], target_value)))
}

/// Train `model` in place. Each step: shuffle-pick one case, sample 8 of
/// its slices, regress the scores toward +1/-1, AdamW-update. Per-epoch
/// validation (when `val_cases` is given) selects the best checkpoint by
/// macro F1. Returns the loss curve; `sink` receives best/last/cadence
/// checkpoints.
pub fn train(
    model: &mut PvtModel,
    train_cases: &[ScanCase],
    val_cases: Option<&[ScanCase]>,
    pre: &PreprocessSpec,
    cfg: &TrainConfig,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let usable: Vec<&ScanCase> = train_cases
        .iter()
        .filter(|c| {
            if c.label == Label::Unknown {
                log::warn!("case {}: unlabeled, excluded from training", c.case_id);
                false
            } else {
                !c.is_empty()
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Config("training set has no labeled, non-empty cases".into()));
    }
    if !usable.iter().any(|c| c.label == Label::Positive)
        || !usable.iter().any(|c| c.label == Label::Negative)
    {
        log::warn!("training set covers only one class; scores will saturate toward it");
    }

    let mut optimizer = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut shuffle_rng = stream(cfg.seed, "shuffle");
    let mut sampler = SliceSampler::new(subseed(cfg.seed, "train-sampler"), cfg.sigma_divisor)?;
    let val_voting = VotingConfig::new(cfg.val_rounds)?;

    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut steps = 0usize;
    let mut best: Option<(usize, f64)> = None;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for (step_in_epoch, &case_index) in order.iter().enumerate() {
            let case = usable[case_index];
            let (batch, target) = training_batch(case, &mut sampler, pre)?;
            let tape = Tape::new();
            let scores = model.forward(&tape, &batch)?;
            let loss = mse_loss(&tape, &scores, &target)?;
            let loss_value = f64::from(loss.item()?);
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss diverged to {loss_value} at epoch {epoch} step {} (case {})",
                    step_in_epoch + 1,
                    case.case_id
                )));
            }
            backward(&loss, &tape)?;
            let mut params = model.params_mut();
            optimizer.step(&mut params)?;
            loss_sum += loss_value;
            steps += 1;
        }
        let mean_loss = loss_sum / order.len() as f64;

        let mut val_macro_f1 = None;
        if let Some(val) = val_cases {
            let report = evaluate(
                model,
                val,
                pre,
                cfg.sigma_divisor,
                &val_voting,
                subseed(cfg.seed, &format!("val-epoch-{epoch}")),
            )?;
            val_macro_f1 = Some(report.macro_f1);
            let improved = best.map(|(_, f1)| report.macro_f1 > f1).unwrap_or(true);
            if improved {
                best = Some((epoch, report.macro_f1));
                if let Some(sink) = sink {
                    sink.save(model, "best")?;
                }
            }
        }
        log::info!(
            "epoch {epoch}: mean loss {mean_loss:.6}{}",
            val_macro_f1
                .map(|v| format!(", val macro F1 {v:.4}"))
                .unwrap_or_default()
        );
        if let Some(sink) = sink {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                sink.save(model, &format!("epoch-{epoch:03}"))?;
            }
        }
        curve.push(EpochStats {
            epoch,
            mean_loss,
            val_macro_f1,
        });
    }
    if let Some(sink) = sink {
        sink.save(model, "last")?;
        // a run without validation still leaves a usable "best"
        if best.is_none() {
            sink.save(model, "best")?;
        }
    }
    Ok(TrainOutcome {
        curve,
        steps,
        best_epoch: best.map(|(e, _)| e),
        best_val_macro_f1: best.map(|(_, f1)| f1),
    })
}
