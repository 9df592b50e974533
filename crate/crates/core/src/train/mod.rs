//! Training and evaluation protocols: audiogram pairing, the Adam training
//! loop with early stopping, fine-tuning regimes, k-fold cross-validation,
//! and the zero/few/full-shot transfer ladder.

mod data;
mod finetune;
mod kfold;
mod optimizer;
mod pairing;
mod trainer;
mod transfer;

pub use data::{register_fusion_weights, FeatureSource, TrainData, FUSION_LOGITS};
pub use finetune::{finetune, FinetuneOutcome};
pub use kfold::{kfold_cv, verify_fold_cover, KfoldOutcome};
pub use optimizer::{Adam, OptimizerPolicy};
pub use pairing::{build_pairing, kfold_partition, PairingPlan};
pub use trainer::{evaluate, init_store, log_to_csv, train, validation_loss, LogRow, TrainOutcome};
pub use transfer::{transfer_protocol, TransferOutcome, TransferPlan, TransferRow, TransferSize};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which parts of a tunable feature encoder a fine-tuning run may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// No encoder tuning; only the assessment model trains.
    None,
    /// Partial: the convolutional feature extractor stays frozen, the
    /// transformer layers tune.
    Pf,
    /// Entire: convolutional extractor and transformer layers tune together.
    Ef,
    /// Two stages: first train with the encoder fully frozen, then unfreeze
    /// everything at a lower learning rate.
    TwoStage,
}

impl FinetuneMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FinetuneMode::None => "none",
            FinetuneMode::Pf => "pf",
            FinetuneMode::Ef => "ef",
            FinetuneMode::TwoStage => "two_stage",
        }
    }

    /// True when the mode updates encoder parameters at some point.
    pub fn tunes_encoder(&self) -> bool {
        !matches!(self, FinetuneMode::None)
    }
}

impl std::fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Adam learning rate for the assessment model and fusion weights.
    pub base_lr: f64,
    /// Adam learning rate for encoder parameters when a mode tunes them.
    pub provider_lr: f64,
    /// Combos per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub finetune_mode: FinetuneMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            provider_lr: 1e-5,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            finetune_mode: FinetuneMode::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("base_lr", self.base_lr), ("provider_lr", self.provider_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive and finite, got {lr}"
                )));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        Ok(())
    }
}
