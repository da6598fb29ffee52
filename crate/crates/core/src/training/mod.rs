//! Optimisation loop, learning-rate schedule, checkpoints and transfer
//! learning.

mod checkpoint;
mod transfer;

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;
pub use transfer::{transfer_train, TransferMode, TransferOutcome};

use crate::data::{Chip, Split, SplitConfig, CHIP_PIXELS};
use crate::error::{Error, Result};
use crate::metrics::masked_loss;
use crate::network::{ModelState, CHIP_SIZE, INPUT_CHANNELS};
use crate::rng::RngStream;
use crate::tensor::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::tensor::{Mode, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fractions of `epochs` at which the rate is multiplied by `lr_factor`.
    pub milestones: Vec<f64>,
    pub lr_factor: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Global gradient-norm cap; off by default.
    pub clip_grad_norm: Option<f64>,
    /// Chips from test blocks of this split are refused.
    pub split: SplitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 96,
            learning_rate: 1e-3,
            milestones: vec![0.1, 0.2, 0.5],
            lr_factor: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            clip_grad_norm: None,
            split: SplitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("train config: {m}")));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.lr_factor > 0.0) {
            return bad("learning rate and factor must be positive");
        }
        if self.milestones.iter().any(|m| !(*m > 0.0 && *m < 1.0))
            || self.milestones.windows(2).any(|w| w[0] >= w[1])
        {
            return bad("milestones must be strictly increasing inside (0, 1)");
        }
        if matches!(self.clip_grad_norm, Some(c) if !(c > 0.0)) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }
}

/// Learning rate in effect during `epoch`: each milestone at
/// `floor(fraction * epochs)` multiplies the rate by `lr_factor` from that
/// epoch onwards.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let drops = cfg
        .milestones
        .iter()
        .filter(|&&f| epoch >= (f * cfg.epochs as f64).floor() as usize)
        .count();
    cfg.learning_rate * cfg.lr_factor.powi(drops as i32)
}

/// Stacks chips into `B x 10 x 40 x 40` inputs and `B x 1 x S x S` targets
/// cropped by `margin` on every side.
pub fn assemble_batch(chips: &[&Chip], margin: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let b = chips.len();
    let s = CHIP_SIZE - 2 * margin;
    let mut input = Vec::with_capacity(b * INPUT_CHANNELS * CHIP_PIXELS);
    let mut target = Vec::with_capacity(b * s * s);
    for c in chips {
        input.extend_from_slice(&c.input);
        for r in margin..margin + s {
            target.extend_from_slice(&c.target[r * CHIP_SIZE + margin..r * CHIP_SIZE + margin + s]);
        }
    }
    Ok((
        Tensor::from_vec([b, INPUT_CHANNELS, CHIP_SIZE, CHIP_SIZE], input)?,
        Tensor::from_vec([b, 1, s, s], target)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// NaN when every batch of the epoch was skipped.
    pub mean_loss: f64,
    pub lr: f64,
    pub skipped_batches: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub optimizer: Adam<f32>,
    /// Wall time of each optimisation step (forward, backward, update), seconds.
    pub step_seconds: Vec<f64>,
    /// Wall time of the backward pass of each step, seconds.
    pub backward_seconds: Vec<f64>,
    /// Parameters that received gradients.
    pub gradient_parameters: usize,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,lr,skipped_batches\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{},{:e},{}\n",
                r.epoch, r.mean_loss, r.lr, r.skipped_batches
            ));
        }
        s
    }
}

/// Trains `model` in place.
///
/// Every epoch shuffles the chips with a stream derived from the seed and
/// the epoch, so the result depends only on the inputs. Batches without a
/// single valid target pixel are skipped and counted. If only the head is
/// trainable the forward pass uses running statistics, leaving the frozen
/// batch-norm buffers untouched.
pub fn train(
    model: &mut ModelState<f32>,
    chips: &[&Chip],
    cfg: &TrainConfig,
    optimizer: Option<Adam<f32>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if chips.is_empty() {
        return Err(Error::InvalidArgument("no training chips".into()));
    }
    if let Some(c) = chips.iter().find(|c| cfg.split.split(c) == Split::Test) {
        return Err(Error::InvalidArgument(format!(
            "chip {} belongs to a test block",
            c.id
        )));
    }
    let mut adam = match optimizer {
        Some(a) if a.first.len() == model.params().len() => a,
        Some(_) => {
            return Err(Error::InvalidArgument(
                "optimizer state does not match the model".into(),
            ))
        }
        None => Adam::new(cfg.adam, model.params()),
    };
    let frozen = model.params().iter().any(|p| !p.trainable);
    let mode = if frozen { Mode::Mc } else { Mode::Train };
    let margin = model.spec().border_margin;
    let root = RngStream::new(cfg.seed, 0x7EA1_0000);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step_seconds = Vec::new();
    let mut backward_seconds = Vec::new();
    let mut global_batch = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        let mut order: Vec<usize> = (0..chips.len()).collect();
        order.shuffle(&mut root.derive(&[1, epoch as u64]).generator(0));
        let mut losses = Vec::new();
        let mut skipped = 0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Chip> = idx.iter().map(|&i| chips[i]).collect();
            let (x, y) = assemble_batch(&batch, margin)?;
            let start = Instant::now();
            let mut drop = root.derive(&[2, epoch as u64, bi as u64]);
            let (pred, tape) = model.forward_recorded(&x, mode, &mut drop)?;
            let loss = match masked_loss(&pred, &y) {
                Ok(l) => l,
                Err(Error::NoValidPixels) => {
                    skipped += 1;
                    global_batch += 1;
                    continue;
                }
                Err(Error::NonPositiveVariance(_)) => {
                    return Err(Error::NonFiniteLoss {
                        batch: global_batch,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: global_batch,
                });
            }
            model.zero_grads();
            let bstart = Instant::now();
            model.backward(&tape, &loss.grad, false)?;
            backward_seconds.push(bstart.elapsed().as_secs_f64());
            if let Some(max) = cfg.clip_grad_norm {
                clip_grad_norm(model.params_mut(), max);
            }
            adam.step(model.params_mut(), lr);
            if mode.uses_batch_stats() {
                model.commit_running_stats(&tape);
            }
            step_seconds.push(start.elapsed().as_secs_f64());
            losses.push(loss.value);
            global_batch += 1;
        }
        let mean_loss = crate::metrics::mean(&losses).unwrap_or(f64::NAN);
        log::info!("epoch {epoch}: loss {mean_loss:.4}, lr {lr:e}, skipped {skipped}");
        history.push(EpochRecord {
            epoch,
            mean_loss,
            lr,
            skipped_batches: skipped,
        });
    }
    Ok(TrainOutcome {
        history,
        optimizer: adam,
        step_seconds,
        backward_seconds,
        gradient_parameters: model.count_parameters(true),
    })
}
