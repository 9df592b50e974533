//! Fine-tuning regimes over a tunable feature encoder.
//!
//! Partial (PF) freezes the convolutional frontend and tunes the transformer
//! stack; entire (EF) tunes both; two-stage first trains with the whole
//! encoder frozen, then unfreezes everything at a lower learning rate.
//! Frozen groups are verified byte-identical before and after.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::params::{ParamGroup, ParamStore};
use crate::train::data::TrainData;
use crate::train::optimizer::OptimizerPolicy;
use crate::train::pairing::PairingPlan;
use crate::train::trainer::{train, LogRow, TrainOutcome};
use crate::train::{FinetuneMode, TrainConfig};

/// Learning-rate policy of one fine-tuning stage.
fn stage_policy(mode: FinetuneMode, config: &TrainConfig, stage: usize) -> OptimizerPolicy {
    let base = OptimizerPolicy::frozen()
        .with_rate(ParamGroup::Model, config.base_lr)
        .with_rate(ParamGroup::FusionWeights, config.base_lr);
    match (mode, stage) {
        (FinetuneMode::None, _) => base,
        (FinetuneMode::Pf, _) => {
            base.with_rate(ParamGroup::FrontendTransformer, config.provider_lr)
        }
        (FinetuneMode::Ef, _) => base
            .with_rate(ParamGroup::FrontendConv, config.provider_lr)
            .with_rate(ParamGroup::FrontendTransformer, config.provider_lr),
        (FinetuneMode::TwoStage, 0) => base,
        (FinetuneMode::TwoStage, _) => OptimizerPolicy::frozen()
            .with_rate(ParamGroup::Model, config.provider_lr)
            .with_rate(ParamGroup::FusionWeights, config.provider_lr)
            .with_rate(ParamGroup::FrontendConv, config.provider_lr)
            .with_rate(ParamGroup::FrontendTransformer, config.provider_lr),
    }
}

/// What a fine-tuning run produced.
#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Stage logs concatenated, epochs renumbered consecutively.
    pub log: Vec<LogRow>,
    /// Assessment-model learning rate of each stage, in order.
    pub stage_lrs: Vec<f64>,
    pub stages: Vec<TrainOutcome>,
}

/// Fine-tune `store` according to `config.finetune_mode`.
///
/// Modes that tune the encoder require a tunable feature source; precomputed
/// features raise a capability error. Groups a stage declares frozen are
/// verified byte-identical across that stage.
pub fn finetune(
    store: &mut ParamStore,
    data: &TrainData,
    model: &ModelConfig,
    train_plan: &PairingPlan,
    val_plan: &PairingPlan,
    config: &TrainConfig,
) -> Result<FinetuneOutcome> {
    let mode = config.finetune_mode;
    if mode.tunes_encoder() && !data.source.is_tunable() {
        return Err(Error::Capability {
            provider: "precomputed-features".into(),
            capability: format!("parameter tuning required by mode {mode}"),
        });
    }

    let n_stages = if mode == FinetuneMode::TwoStage { 2 } else { 1 };
    let mut outcome = FinetuneOutcome {
        log: Vec::new(),
        stage_lrs: Vec::new(),
        stages: Vec::new(),
    };
    let mut epoch_offset = 0usize;
    for stage in 0..n_stages {
        let policy = stage_policy(mode, config, stage);
        let frozen = policy.frozen_groups();
        let digests_before: Vec<String> =
            frozen.iter().map(|g| store.group_digest(*g)).collect();

        let stage_outcome = train(store, data, model, train_plan, val_plan, config, &policy)?;

        for (group, before) in frozen.iter().zip(&digests_before) {
            if store.group_digest(*group) != *before {
                return Err(Error::InvalidInput(format!(
                    "frozen parameter group {group} changed during stage {stage}"
                )));
            }
        }

        outcome
            .stage_lrs
            .push(policy.rate_of(ParamGroup::Model).unwrap_or(0.0));
        outcome.log.extend(stage_outcome.log.iter().map(|row| LogRow {
            epoch: row.epoch + epoch_offset,
            ..row.clone()
        }));
        epoch_offset += stage_outcome.epochs_run;
        outcome.stages.push(stage_outcome);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiogram::{make_pattern, Audiogram, AudiogramCategory, NORMAL_AUDIOGRAM_ID};
    use crate::features::{FeatureSequence, MockEncoder, MockEncoderConfig, WeightMode};
    use crate::rng::rng_for_key;
    use crate::signal::{ConditionLabel, Role, Waveform};
    use crate::targets::{ComboKey, ScoreTable, TargetPair};
    use crate::train::data::FeatureSource;
    use crate::train::trainer::init_store;
    use ndarray::Array2;
    use rand::Rng;
    use std::collections::BTreeMap;

    struct World {
        source: FeatureSource,
        patterns: BTreeMap<String, crate::audiogram::HearingLossPattern>,
        targets: ScoreTable,
        train_plan: PairingPlan,
        val_plan: PairingPlan,
    }

    fn patterns() -> BTreeMap<String, crate::audiogram::HearingLossPattern> {
        let mut map = BTreeMap::new();
        map.insert(
            NORMAL_AUDIOGRAM_ID.to_string(),
            make_pattern(&Audiogram::from_levels(
                NORMAL_AUDIOGRAM_ID,
                [0.0; 6],
                AudiogramCategory::Normal,
            )),
        );
        map.insert(
            "ag_mid".to_string(),
            make_pattern(&Audiogram::from_levels(
                "ag_mid",
                [40.0; 6],
                AudiogramCategory::Flat,
            )),
        );
        map
    }

    fn plans_and_targets(utts: &[String]) -> (ScoreTable, PairingPlan, PairingPlan) {
        let mut targets = ScoreTable::new();
        let mut train_combos = Vec::new();
        let mut val_combos = Vec::new();
        for (i, utt) in utts.iter().enumerate() {
            for ag in [NORMAL_AUDIOGRAM_ID, "ag_mid"] {
                let key = ComboKey::new(utt, ConditionLabel::Noisy, ag);
                targets
                    .insert(
                        key.clone(),
                        TargetPair {
                            quality: 0.3 + 0.05 * (i % 5) as f64,
                            intelligibility: 0.6 + 0.05 * (i % 5) as f64,
                        },
                    )
                    .unwrap();
                if i % 4 == 0 {
                    val_combos.push(key);
                } else {
                    train_combos.push(key);
                }
            }
        }
        (
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

    fn tunable_world(n_utts: usize) -> World {
        let encoder = MockEncoder::new(MockEncoderConfig::tiny(3));
        let mut audio = BTreeMap::new();
        let mut rng = rng_for_key(1, "finetune/audio");
        let utts: Vec<String> = (0..n_utts).map(|i| format!("utt{i:03}")).collect();
        for utt in &utts {
            let samples: Vec<f64> = (0..48).map(|_| rng.random_range(-0.5..0.5)).collect();
            audio.insert(
                (utt.clone(), ConditionLabel::Noisy),
                Waveform::new(samples, 16_000).unwrap(),
            );
        }
        let (targets, train_plan, val_plan) = plans_and_targets(&utts);
        World {
            source: FeatureSource::Tunable { encoder, audio },
            patterns: patterns(),
            targets,
            train_plan,
            val_plan,
        }
    }

    fn run(
        world: &World,
        mode: FinetuneMode,
    ) -> (ParamStore, FinetuneOutcome, BTreeMap<ParamGroup, String>) {
        let data = TrainData {
            source: &world.source,
            patterns: &world.patterns,
            targets: &world.targets,
            weight_mode: WeightMode::WeightedSum,
        };
        let model = ModelConfig::tiny(3);
        let mut store = init_store(&model, &data, 9).unwrap();
        let before: BTreeMap<ParamGroup, String> = ParamGroup::ALL
            .iter()
            .map(|g| (*g, store.group_digest(*g)))
            .collect();
        let config = TrainConfig {
            base_lr: 1e-2,
            provider_lr: 1e-3,
            max_epochs: 2,
            patience: 5,
            batch_size: 4,
            seed: 11,
            finetune_mode: mode,
        };
        let outcome = finetune(
            &mut store,
            &data,
            &model,
            &world.train_plan,
            &world.val_plan,
            &config,
        )
        .unwrap();
        (store, outcome, before)
    }

    fn digest(store: &ParamStore, group: ParamGroup) -> String {
        store.group_digest(group)
    }

    #[test]
    fn pf_freezes_conv_and_tunes_transformer() {
        let world = tunable_world(8);
        let (store, _, before) = run(&world, FinetuneMode::Pf);
        assert_eq!(
            digest(&store, ParamGroup::FrontendConv),
            before[&ParamGroup::FrontendConv]
        );
        assert_ne!(
            digest(&store, ParamGroup::FrontendTransformer),
            before[&ParamGroup::FrontendTransformer]
        );
        assert_ne!(digest(&store, ParamGroup::Model), before[&ParamGroup::Model]);
    }

    #[test]
    fn ef_updates_every_group() {
        let world = tunable_world(8);
        let (store, outcome, before) = run(&world, FinetuneMode::Ef);
        for group in ParamGroup::ALL {
            assert_ne!(
                digest(&store, group),
                before[&group],
                "group {group} unchanged under entire fine-tuning"
            );
            let updates = outcome.stages[0].group_updates.get(&group).copied();
            assert!(updates.unwrap_or(0) > 0, "group {group} saw no updates");
        }
    }

    #[test]
    fn two_stage_records_the_two_learning_rates_in_order() {
        let world = tunable_world(8);
        let (_, outcome, _) = run(&world, FinetuneMode::TwoStage);
        assert_eq!(outcome.stage_lrs, vec![1e-2, 1e-3]);
        assert_eq!(outcome.stages.len(), 2);
        // Stage 1 froze the encoder: no frontend updates recorded.
        let stage1 = &outcome.stages[0].group_updates;
        assert!(stage1.get(&ParamGroup::FrontendConv).is_none());
        assert!(stage1.get(&ParamGroup::FrontendTransformer).is_none());
        // Stage 2 tuned it.
        let stage2 = &outcome.stages[1].group_updates;
        assert!(stage2.get(&ParamGroup::FrontendConv).copied().unwrap_or(0) > 0);
        // The merged log renumbers epochs consecutively and switches lr.
        let epochs: Vec<usize> = outcome.log.iter().map(|r| r.epoch).collect();
        assert!(epochs.windows(2).all(|w| w[0] <= w[1]));
        let lrs: Vec<f64> = outcome.log.iter().map(|r| r.lr).collect();
        assert!(lrs.starts_with(&[1e-2]));
        assert!(lrs.ends_with(&[1e-3]));
    }

    #[test]
    fn tuning_modes_reject_precomputed_features() {
        let mut features = BTreeMap::new();
        features.insert(
            ("utt000".to_string(), ConditionLabel::Noisy),
            FeatureSequence {
                frames: Array2::zeros((4, 3)),
                frame_hop_seconds: 0.02,
                provider_id: "frozen".into(),
            },
        );
        let source = FeatureSource::Precomputed(features);
        let patterns = patterns();
        let (targets, train_plan, val_plan) =
            plans_and_targets(&["utt000".to_string()]);
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(3);
        let mut store = init_store(&model, &data, 1).unwrap();
        let config = TrainConfig {
            finetune_mode: FinetuneMode::Pf,
            ..TrainConfig::default()
        };
        let err = finetune(
            &mut store,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Capability { .. }), "{err}");
    }
}
