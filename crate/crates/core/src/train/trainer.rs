//! The core training loop: seeded shuffling, mini-batch gradient
//! accumulation, Adam updates, per-epoch validation, early stopping, and a
//! CSV-friendly log.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::TaskScores;
use crate::model::{LossBreakdown, ModelConfig};
use crate::params::{GradStore, ParamGroup, ParamStore};
use crate::rng::rng_for_key;
use crate::targets::ComboKey;
use crate::train::data::{register_fusion_weights, FeatureSource, TrainData};
use crate::train::optimizer::{Adam, OptimizerPolicy};
use crate::train::pairing::PairingPlan;
use crate::train::TrainConfig;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    /// "train" or "validation".
    pub split: &'static str,
    pub loss_total: f64,
    pub loss_q: f64,
    pub loss_i: f64,
    /// Learning rate of the assessment-model group during this epoch.
    pub lr: f64,
}

/// Render log rows as CSV with full-precision floats.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("epoch,split,loss_total,loss_q,loss_i,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.split, r.loss_total, r.loss_q, r.loss_i, r.lr
        ));
    }
    out
}

/// What a training run produced. The store passed to [`train`] is left
/// holding the best-validation parameters.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// Epoch of the best validation loss; 0 means initialization won.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub initial_validation: LossBreakdown,
    pub best_validation: LossBreakdown,
    pub stopped_early: bool,
    /// Parameter-tensor updates applied, per group; frozen groups absent.
    pub group_updates: BTreeMap<ParamGroup, u64>,
}

/// Initialize a parameter store for a model over the given data source:
/// model tensors, plus encoder tensors and fusion logits when the source is
/// tunable.
pub fn init_store(model: &ModelConfig, data: &TrainData, seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    model.register_params(&mut store, seed)?;
    if let FeatureSource::Tunable { encoder, .. } = data.source {
        encoder.register_params(&mut store)?;
        if data.weight_mode == crate::features::WeightMode::WeightedSum {
            register_fusion_weights(&mut store, encoder.config().n_layers)?;
        }
    }
    Ok(store)
}

/// Train `store` on the train plan, validating each epoch on the validation
/// plan, with early stopping on validation total loss.
///
/// The run is deterministic in `(config.seed, data, initial parameters)`.
/// On return the store holds the parameters of the best validation epoch.
pub fn train(
    store: &mut ParamStore,
    data: &TrainData,
    model: &ModelConfig,
    train_plan: &PairingPlan,
    val_plan: &PairingPlan,
    config: &TrainConfig,
    policy: &OptimizerPolicy,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    policy.validate()?;
    if train_plan.is_empty() || val_plan.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation plans must be non-empty".into(),
        ));
    }
    data.check_coverage(&train_plan.combos)?;
    data.check_coverage(&val_plan.combos)?;

    let lr_label = policy.rate_of(ParamGroup::Model).unwrap_or(0.0);
    let mut adam = Adam::new(policy.clone());
    let mut log = Vec::new();

    let initial_validation = data.mean_loss(model, store, &val_plan.combos)?;
    let mut best_validation = initial_validation;
    let mut best_params = store.clone();
    let mut best_epoch = 0usize;
    let mut epochs_since_best = 0usize;
    let mut epochs_run = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_plan.combos.len()).collect();
        let mut rng = rng_for_key(config.seed, &format!("train/epoch{epoch}"));
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }

        let mut epoch_loss = LossBreakdown {
            total: 0.0,
            quality: 0.0,
            intelligibility: 0.0,
        };
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = GradStore::new();
            for &i in chunk {
                let combo_loss =
                    data.step_gradients(model, store, &train_plan.combos[i], &mut grads)?;
                if !combo_loss.total.is_finite() {
                    return Err(Error::NanLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                epoch_loss.add(&combo_loss);
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.step(store, &grads)?;
        }
        epoch_loss.scale(1.0 / train_plan.combos.len() as f64);

        let val = data.mean_loss(model, store, &val_plan.combos)?;
        log.push(LogRow {
            epoch,
            split: "train",
            loss_total: epoch_loss.total,
            loss_q: epoch_loss.quality,
            loss_i: epoch_loss.intelligibility,
            lr: lr_label,
        });
        log.push(LogRow {
            epoch,
            split: "validation",
            loss_total: val.total,
            loss_q: val.quality,
            loss_i: val.intelligibility,
            lr: lr_label,
        });
        epochs_run = epoch;

        if val.total < best_validation.total {
            best_validation = val;
            best_params = store.clone();
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    *store = best_params;
    Ok(TrainOutcome {
        log,
        best_epoch,
        epochs_run,
        initial_validation,
        best_validation,
        stopped_early,
        group_updates: adam.updates_per_group().clone(),
    })
}

/// Utterance-level predictions for every combo in a plan.
pub fn evaluate(
    store: &ParamStore,
    data: &TrainData,
    model: &ModelConfig,
    plan: &PairingPlan,
) -> Result<BTreeMap<ComboKey, TaskScores>> {
    let mut out = BTreeMap::new();
    for key in &plan.combos {
        let pred = data.predict(model, store, key)?;
        out.insert(
            key.clone(),
            TaskScores {
                quality: pred.utterance_quality,
                intelligibility: pred.utterance_intelligibility,
            },
        );
    }
    Ok(out)
}

/// Mean loss of a plan under fixed parameters.
pub fn validation_loss(
    store: &ParamStore,
    data: &TrainData,
    model: &ModelConfig,
    plan: &PairingPlan,
) -> Result<LossBreakdown> {
    data.mean_loss(model, store, &plan.combos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiogram::{make_pattern, Audiogram, AudiogramCategory, NORMAL_AUDIOGRAM_ID};
    use crate::features::{FeatureSequence, WeightMode};
    use crate::rng::rng_for_key;
    use crate::signal::{ConditionLabel, Role};
    use crate::targets::{ScoreTable, TargetPair};
    use ndarray::Array2;

    /// A learnable toy problem: targets depend on the hearing-loss level and
    /// a per-utterance feature offset.
    fn toy_world(
        n_utts: usize,
    ) -> (
        FeatureSource,
        BTreeMap<String, crate::audiogram::HearingLossPattern>,
        ScoreTable,
        PairingPlan,
        PairingPlan,
    ) {
        let mut features = BTreeMap::new();
        let mut targets = ScoreTable::new();
        let mut patterns = BTreeMap::new();
        patterns.insert(
            NORMAL_AUDIOGRAM_ID.to_string(),
            make_pattern(&Audiogram::from_levels(
                NORMAL_AUDIOGRAM_ID,
                [0.0; 6],
                AudiogramCategory::Normal,
            )),
        );
        patterns.insert(
            "ag_mid".to_string(),
            make_pattern(&Audiogram::from_levels(
                "ag_mid",
                [45.0; 6],
                AudiogramCategory::Flat,
            )),
        );

        let mut train_combos = Vec::new();
        let mut val_combos = Vec::new();
        let mut rng = rng_for_key(0, "toy/features");
        for i in 0..n_utts {
            let utt = format!("utt{i:03}");
            let offset = (i as f64) / (n_utts as f64) - 0.5;
            features.insert(
                (utt.clone(), ConditionLabel::Noisy),
                FeatureSequence {
                    frames: Array2::from_shape_fn((6, 4), |_| {
                        offset + rng.random_range(-0.05..0.05)
                    }),
                    frame_hop_seconds: 0.02,
                    provider_id: "toy".into(),
                },
            );
            for ag in [NORMAL_AUDIOGRAM_ID, "ag_mid"] {
                let key = ComboKey::new(&utt, ConditionLabel::Noisy, ag);
                let loss_level = if ag == NORMAL_AUDIOGRAM_ID { 0.0 } else { 0.3 };
                let q = (0.7 - 0.4 * offset - loss_level).clamp(0.05, 0.95);
                targets
                    .insert(
                        key.clone(),
                        TargetPair {
                            quality: q,
                            intelligibility: (q + 0.1).clamp(0.05, 0.95),
                        },
                    )
                    .unwrap();
                if i % 5 == 0 {
                    val_combos.push(key);
                } else {
                    train_combos.push(key);
                }
            }
        }
        (
            FeatureSource::Precomputed(features),
            patterns,
            targets,
            PairingPlan {
                combos: train_combos,
                role: Role::Train,
            },
            PairingPlan {
                combos: val_combos,
                role: Role::Validation,
            },
        )
    }

    fn fast_config(seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            base_lr: 5e-3,
            max_epochs: epochs,
            patience: epochs,
            batch_size: 8,
            seed,
            ..TrainConfig::default()
        }
    }

    fn model_policy(config: &TrainConfig) -> OptimizerPolicy {
        OptimizerPolicy::frozen()
            .with_rate(ParamGroup::Model, config.base_lr)
            .with_rate(ParamGroup::FusionWeights, config.base_lr)
    }

    #[test]
    fn training_reduces_validation_loss() {
        let (source, patterns, targets, train_plan, val_plan) = toy_world(30);
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let mut store = init_store(&model, &data, 1).unwrap();
        let config = fast_config(3, 25);
        let outcome = train(
            &mut store,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &config,
            &model_policy(&config),
        )
        .unwrap();
        assert!(
            outcome.best_validation.total < outcome.initial_validation.total,
            "{} !< {}",
            outcome.best_validation.total,
            outcome.initial_validation.total
        );
        assert_eq!(outcome.log.len(), 2 * outcome.epochs_run);
    }

    #[test]
    fn zero_epochs_leave_parameters_at_initialization() {
        let (source, patterns, targets, train_plan, val_plan) = toy_world(10);
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let mut store = init_store(&model, &data, 2).unwrap();
        let digest_before = ParamGroup::ALL.map(|g| store.group_digest(g));
        let config = fast_config(1, 0);
        let outcome = train(
            &mut store,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &config,
            &model_policy(&config),
        )
        .unwrap();
        assert_eq!(outcome.epochs_run, 0);
        assert_eq!(outcome.best_epoch, 0);
        assert!(outcome.log.is_empty());
        let digest_after = ParamGroup::ALL.map(|g| store.group_digest(g));
        assert_eq!(digest_before, digest_after);
    }

    #[test]
    fn same_seed_gives_identical_loss_curves() {
        let run = || {
            let (source, patterns, targets, train_plan, val_plan) = toy_world(12);
            let data = TrainData {
                source: &source,
                patterns: &patterns,
                targets: &targets,
                weight_mode: WeightMode::LastLayer,
            };
            let model = ModelConfig::tiny(4);
            let mut store = init_store(&model, &data, 5).unwrap();
            let config = fast_config(7, 5);
            train(
                &mut store,
                &data,
                &model,
                &train_plan,
                &val_plan,
                &config,
                &model_policy(&config),
            )
            .unwrap()
            .log
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn different_seeds_shuffle_differently() {
        let (source, patterns, targets, train_plan, val_plan) = toy_world(12);
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let run = |seed: u64| {
            let mut store = init_store(&model, &data, 5).unwrap();
            let config = fast_config(seed, 5);
            train(
                &mut store,
                &data,
                &model,
                &train_plan,
                &val_plan,
                &config,
                &model_policy(&config),
            )
            .unwrap()
            .log
        };
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn evaluation_emits_one_row_per_combo() {
        let (source, patterns, targets, train_plan, _) = toy_world(8);
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let store = init_store(&model, &data, 4).unwrap();
        let predictions = evaluate(&store, &data, &model, &train_plan).unwrap();
        assert_eq!(predictions.len(), train_plan.len());
        for scores in predictions.values() {
            assert!((0.0..=1.0).contains(&scores.quality));
            assert!((0.0..=1.0).contains(&scores.intelligibility));
        }
    }

    #[test]
    fn log_csv_has_header_and_full_precision() {
        let rows = vec![LogRow {
            epoch: 1,
            split: "train",
            loss_total: 0.125,
            loss_q: 0.0625,
            loss_i: 0.0625,
            lr: 1e-4,
        }];
        let csv = log_to_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,split,loss_total,loss_q,loss_i,lr"));
        assert_eq!(lines.next(), Some("1,train,0.125,0.0625,0.0625,0.0001"));
    }

    #[test]
    fn missing_targets_fail_before_any_update() {
        let (source, patterns, _, train_plan, val_plan) = toy_world(6);
        let empty = ScoreTable::new();
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &empty,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let mut store = init_store(&model, &data, 4).unwrap();
        let config = fast_config(1, 1);
        let err = train(
            &mut store,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &config,
            &model_policy(&config),
        )
        .unwrap_err();
        assert!(matches!(err, Error::KeyMismatch(_)), "{err}");
    }
}
