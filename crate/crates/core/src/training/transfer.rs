use serde::{Deserialize, Serialize};

use crate::data::Chip;
use crate::error::Result;
use crate::training::{train, Checkpoint, EpochRecord, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Re-optimise every parameter.
    Full,
    /// Retrain only the 1x1 head.
    FrozenHead,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub gradient_parameters: usize,
    pub total_parameters: usize,
    pub mean_step_seconds: f64,
    pub mean_backward_seconds: f64,
}

/// Adapts a trained checkpoint to new targets with a fresh optimizer.
pub fn transfer_train(
    base: &Checkpoint,
    chips: &[&Chip],
    mode: TransferMode,
    cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    let mut model = base.model.clone();
    match mode {
        TransferMode::Full => model.unfreeze(),
        TransferMode::FrozenHead => model.freeze_feature_extractor(),
    }
    let outcome = train(&mut model, chips, cfg, None)?;
    let mean = |v: &[f64]| crate::metrics::mean(v).unwrap_or(f64::NAN);
    let total_parameters = model.count_parameters(false);
    let config = serde_json::json!({ "transfer": mode, "train": cfg }).to_string();
    Ok(TransferOutcome {
        mean_step_seconds: mean(&outcome.step_seconds),
        mean_backward_seconds: mean(&outcome.backward_seconds),
        gradient_parameters: outcome.gradient_parameters,
        total_parameters,
        history: outcome.history,
        checkpoint: Checkpoint {
            model,
            optimizer: Some(outcome.optimizer),
            epoch: base.epoch + cfg.epochs as u64,
            config,
        },
    })
}
