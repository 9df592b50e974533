//! Transfer protocol: adapt a trained model to a new domain with zero, a
//! fixed budget, or all of the target-domain training combos, evaluating the
//! model after each budget.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audiogram::AudiogramCategory;
use crate::error::{Error, Result};
use crate::metrics::{build_report, EvalReport};
use crate::model::{LossBreakdown, ModelConfig};
use crate::params::ParamStore;
use crate::rng::rng_for_key;
use crate::signal::ConditionLabel;
use crate::targets::ComboKey;
use crate::train::data::TrainData;
use crate::train::finetune::finetune;
use crate::train::pairing::PairingPlan;
use crate::train::trainer::evaluate;
use crate::train::TrainConfig;

/// One rung of the adaptation ladder: a combo budget or the whole train set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferSize {
    Combos(usize),
    Full,
}

impl TransferSize {
    /// Ordering key with `Full` above every finite budget.
    fn rank(&self) -> (u8, usize) {
        match self {
            TransferSize::Combos(n) => (0, *n),
            TransferSize::Full => (1, 0),
        }
    }
}

impl std::fmt::Display for TransferSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransferSize::Combos(n) => write!(f, "{n}"),
            TransferSize::Full => f.write_str("full"),
        }
    }
}

/// Wire form: a plain number or the string "full".
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SizeRepr {
    Count(usize),
    Word(String),
}

impl Serialize for TransferSize {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TransferSize::Combos(n) => SizeRepr::Count(*n).serialize(serializer),
            TransferSize::Full => SizeRepr::Word("full".into()).serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for TransferSize {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match SizeRepr::deserialize(deserializer)? {
            SizeRepr::Count(n) => Ok(TransferSize::Combos(n)),
            SizeRepr::Word(w) if w.eq_ignore_ascii_case("full") => Ok(TransferSize::Full),
            SizeRepr::Word(w) => Err(serde::de::Error::custom(format!(
                "transfer size must be a count or \"full\", got \"{w}\""
            ))),
        }
    }
}

/// The ordered budgets a transfer run walks through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransferPlan {
    pub sizes: Vec<TransferSize>,
}

impl Default for TransferPlan {
    /// Zero-shot, a doubling ladder from 100 to 12,800 combos, then the
    /// whole training set.
    fn default() -> Self {
        let mut sizes = vec![TransferSize::Combos(0)];
        let mut n = 100;
        while n <= 12_800 {
            sizes.push(TransferSize::Combos(n));
            n *= 2;
        }
        sizes.push(TransferSize::Full);
        TransferPlan { sizes }
    }
}

impl TransferPlan {
    /// Check the ladder shape: strictly increasing, zero only first, full
    /// only last, and every interior budget doubles a nonzero predecessor.
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::InvalidInput("transfer plan has no sizes".into()));
        }
        for pair in self.sizes.windows(2) {
            if pair[1].rank() <= pair[0].rank() {
                return Err(Error::InvalidInput(format!(
                    "transfer sizes must strictly increase, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        for (i, size) in self.sizes.iter().enumerate() {
            match size {
                TransferSize::Combos(0) if i != 0 => {
                    return Err(Error::InvalidInput(
                        "zero-shot must be the first transfer size".into(),
                    ));
                }
                TransferSize::Full if i + 1 != self.sizes.len() => {
                    return Err(Error::InvalidInput(
                        "the full budget must be the last transfer size".into(),
                    ));
                }
                TransferSize::Combos(n) if i > 0 && i + 1 < self.sizes.len() => {
                    if let TransferSize::Combos(prev) = self.sizes[i - 1] {
                        if prev > 0 && *n != 2 * prev {
                            return Err(Error::InvalidInput(format!(
                                "interior transfer size {n} must double its predecessor {prev}"
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// What one ladder rung produced.
#[derive(Debug, Clone)]
pub struct TransferRow {
    pub size: TransferSize,
    /// Mean loss on the evaluation plan after adaptation.
    pub adapted_loss: LossBreakdown,
    pub report: EvalReport,
    /// Training combos actually consumed by this rung.
    pub combos_used: usize,
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub rows: Vec<TransferRow>,
}

/// Draw `n` combos from `plan`, balanced across conditions.
///
/// Each condition gets an equal quota (earlier conditions in label order
/// absorb the remainder); when a condition cannot fill its quota the
/// shortfall spills over to the others. Deterministic in `seed` and the
/// plan's combo set.
pub fn stratified_subsample(plan: &PairingPlan, n: usize, seed: u64) -> Result<Vec<ComboKey>> {
    if n > plan.len() {
        return Err(Error::InvalidInput(format!(
            "cannot draw {n} combos from a plan of {}",
            plan.len()
        )));
    }
    let mut pools: BTreeMap<ConditionLabel, Vec<&ComboKey>> = BTreeMap::new();
    for combo in &plan.combos {
        pools.entry(combo.condition).or_default().push(combo);
    }
    for pool in pools.values_mut() {
        pool.sort_unstable();
    }

    let labels: Vec<ConditionLabel> = pools.keys().copied().collect();
    let mut take: BTreeMap<ConditionLabel, usize> = BTreeMap::new();
    let quota = n / labels.len();
    let remainder = n % labels.len();
    for (i, label) in labels.iter().enumerate() {
        let want = quota + usize::from(i < remainder);
        take.insert(*label, want.min(pools[label].len()));
    }
    let mut assigned: usize = take.values().sum();
    while assigned < n {
        let mut grew = false;
        for label in &labels {
            if assigned == n {
                break;
            }
            let t = take.get_mut(label).expect("label present");
            if *t < pools[label].len() {
                *t += 1;
                assigned += 1;
                grew = true;
            }
        }
        debug_assert!(grew, "subsample cannot fill: n exceeds pool");
    }

    let mut rng = rng_for_key(seed, &format!("transfer/size{n}"));
    let mut picked = Vec::with_capacity(n);
    for label in &labels {
        let pool = &pools[label];
        let count = take[label];
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, pool.len(), count).into_vec();
        idx.sort_unstable();
        picked.extend(idx.into_iter().map(|i| pool[i].clone()));
    }
    Ok(picked)
}

/// Walk the transfer ladder: for each budget, clone the source-domain
/// parameters, adapt on that many target-domain combos (none for zero-shot,
/// everything for full), and evaluate on the held-out plan.
#[allow(clippy::too_many_arguments)]
pub fn transfer_protocol(
    base: &ParamStore,
    data: &TrainData,
    model: &ModelConfig,
    train_plan: &PairingPlan,
    val_plan: &PairingPlan,
    eval_plan: &PairingPlan,
    categories: &BTreeMap<String, AudiogramCategory>,
    plan: &TransferPlan,
    config: &TrainConfig,
) -> Result<TransferOutcome> {
    plan.validate()?;
    let mut rows = Vec::with_capacity(plan.sizes.len());
    for &size in &plan.sizes {
        let mut store = base.clone();
        let combos_used = match size {
            TransferSize::Combos(0) => 0,
            TransferSize::Combos(n) => {
                let subset = stratified_subsample(train_plan, n, config.seed)?;
                let sub_plan = PairingPlan {
                    combos: subset,
                    role: train_plan.role,
                };
                finetune(&mut store, data, model, &sub_plan, val_plan, config)?;
                n
            }
            TransferSize::Full => {
                finetune(&mut store, data, model, train_plan, val_plan, config)?;
                train_plan.len()
            }
        };
        let adapted_loss = data.mean_loss(model, &store, &eval_plan.combos)?;
        let predictions = evaluate(&store, data, model, eval_plan)?;
        let eval_targets = data.targets.restricted_to(predictions.keys())?;
        let report = build_report(&predictions, &eval_targets, categories)?;
        rows.push(TransferRow {
            size,
            adapted_loss,
            report,
            combos_used,
        });
    }
    Ok(TransferOutcome { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiogram::{
        make_pattern, Audiogram, AudiogramCategory, HearingLossPattern, NORMAL_AUDIOGRAM_ID,
    };
    use crate::features::{FeatureSequence, WeightMode};
    use crate::rng::rng_for_key;
    use crate::signal::Role;
    use crate::targets::{ScoreTable, TargetPair};
    use crate::train::data::FeatureSource;
    use crate::train::trainer::init_store;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn default_ladder_doubles_from_one_hundred() {
        let plan = TransferPlan::default();
        let expected: Vec<TransferSize> = [0, 100, 200, 400, 800, 1600, 3200, 6400, 12_800]
            .into_iter()
            .map(TransferSize::Combos)
            .chain([TransferSize::Full])
            .collect();
        assert_eq!(plan.sizes, expected);
        plan.validate().unwrap();
    }

    #[test]
    fn ladder_shape_violations_are_rejected() {
        let plan = |sizes: Vec<TransferSize>| TransferPlan { sizes };
        use TransferSize::{Combos, Full};
        assert!(plan(vec![]).validate().is_err());
        assert!(plan(vec![Combos(200), Combos(100)]).validate().is_err());
        assert!(plan(vec![Combos(100), Combos(100)]).validate().is_err());
        assert!(plan(vec![Full, Combos(100)]).validate().is_err());
        assert!(plan(vec![Combos(100), Full, Combos(200)]).validate().is_err());
        // An interior size that is not double its nonzero predecessor.
        assert!(plan(vec![Combos(0), Combos(100), Combos(300), Full])
            .validate()
            .is_err());
        // Edges are exempt from the doubling rule.
        plan(vec![Combos(100), Combos(1600)]).validate().unwrap();
        plan(vec![Combos(0), Combos(50), Combos(100), Full])
            .validate()
            .unwrap();
    }

    #[test]
    fn sizes_serialize_as_numbers_or_full() {
        let plan = TransferPlan {
            sizes: vec![
                TransferSize::Combos(0),
                TransferSize::Combos(100),
                TransferSize::Full,
            ],
        };
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(json, "[0,100,\"full\"]");
        let back: TransferPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        assert!(serde_json::from_str::<TransferPlan>("[0,\"half\"]").is_err());
    }

    fn flat_plan(per_condition: &[(ConditionLabel, usize)]) -> PairingPlan {
        let mut combos = Vec::new();
        for &(condition, count) in per_condition {
            for i in 0..count {
                combos.push(ComboKey::new(
                    &format!("utt{i:04}"),
                    condition,
                    NORMAL_AUDIOGRAM_ID,
                ));
            }
        }
        PairingPlan {
            combos,
            role: Role::Train,
        }
    }

    #[test]
    fn subsample_balances_across_conditions() {
        let plan = flat_plan(&[
            (ConditionLabel::Noisy, 50),
            (ConditionLabel::Enhanced, 50),
            (ConditionLabel::Vocoded, 50),
        ]);
        let picked = stratified_subsample(&plan, 31, 9).unwrap();
        assert_eq!(picked.len(), 31);
        let mut counts: BTreeMap<ConditionLabel, usize> = BTreeMap::new();
        for c in &picked {
            *counts.entry(c.condition).or_default() += 1;
        }
        let mut sizes: Vec<usize> = counts.values().copied().collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![10, 10, 11]);
    }

    #[test]
    fn short_conditions_spill_their_quota_elsewhere() {
        let plan = flat_plan(&[
            (ConditionLabel::Noisy, 2),
            (ConditionLabel::Enhanced, 40),
            (ConditionLabel::Vocoded, 40),
        ]);
        let picked = stratified_subsample(&plan, 30, 9).unwrap();
        assert_eq!(picked.len(), 30);
        let mut counts: BTreeMap<ConditionLabel, usize> = BTreeMap::new();
        for c in &picked {
            *counts.entry(c.condition).or_default() += 1;
        }
        assert_eq!(counts[&ConditionLabel::Noisy], 2);
        assert_eq!(
            counts[&ConditionLabel::Enhanced] + counts[&ConditionLabel::Vocoded],
            28
        );
    }

    #[test]
    fn oversized_budget_is_rejected() {
        let plan = flat_plan(&[(ConditionLabel::Noisy, 5)]);
        assert!(stratified_subsample(&plan, 6, 0).is_err());
    }

    #[test]
    fn subsampling_is_deterministic() {
        let plan = flat_plan(&[
            (ConditionLabel::Noisy, 30),
            (ConditionLabel::Reverberation, 30),
        ]);
        let a = stratified_subsample(&plan, 12, 4).unwrap();
        let b = stratified_subsample(&plan, 12, 4).unwrap();
        assert_eq!(a, b);
        let c = stratified_subsample(&plan, 12, 5).unwrap();
        assert_ne!(a, c);
    }

    /// A small learnable world shared by the ladder tests.
    fn toy_world() -> (
        FeatureSource,
        BTreeMap<String, HearingLossPattern>,
        ScoreTable,
        PairingPlan,
        PairingPlan,
        PairingPlan,
        BTreeMap<String, AudiogramCategory>,
    ) {
        let mut features = BTreeMap::new();
        let mut targets = ScoreTable::new();
        let mut patterns = BTreeMap::new();
        let mut categories = BTreeMap::new();
        patterns.insert(
            NORMAL_AUDIOGRAM_ID.to_string(),
            make_pattern(&Audiogram::from_levels(
                NORMAL_AUDIOGRAM_ID,
                [0.0; 6],
                AudiogramCategory::Normal,
            )),
        );
        categories.insert(NORMAL_AUDIOGRAM_ID.to_string(), AudiogramCategory::Normal);

        let mut train_combos = Vec::new();
        let mut val_combos = Vec::new();
        let mut eval_combos = Vec::new();
        let mut rng = rng_for_key(0, "transfer/toy");
        for i in 0..24 {
            let utt = format!("utt{i:03}");
            let offset = (i as f64) / 24.0 - 0.5;
            features.insert(
                (utt.clone(), ConditionLabel::Noisy),
                FeatureSequence {
                    frames: Array2::from_shape_fn((5, 4), |_| {
                        offset + rng.random_range(-0.05..0.05)
                    }),
                    frame_hop_seconds: 0.02,
                    provider_id: "toy".into(),
                },
            );
            let key = ComboKey::new(&utt, ConditionLabel::Noisy, NORMAL_AUDIOGRAM_ID);
            let q = (0.6 - 0.5 * offset).clamp(0.05, 0.95);
            targets
                .insert(
                    key.clone(),
                    TargetPair {
                        quality: q,
                        intelligibility: (q + 0.05).clamp(0.05, 0.95),
                    },
                )
                .unwrap();
            match i % 6 {
                0 => val_combos.push(key),
                1 => eval_combos.push(key),
                _ => train_combos.push(key),
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
            PairingPlan {
                combos: eval_combos,
                role: Role::Test,
            },
            categories,
        )
    }

    #[test]
    fn ladder_runs_and_zero_shot_matches_the_base_model() {
        let (source, patterns, targets, train_plan, val_plan, eval_plan, categories) = toy_world();
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let base = init_store(&model, &data, 11).unwrap();
        let config = TrainConfig {
            base_lr: 5e-3,
            max_epochs: 8,
            patience: 8,
            batch_size: 4,
            seed: 3,
            ..TrainConfig::default()
        };
        let plan = TransferPlan {
            sizes: vec![
                TransferSize::Combos(0),
                TransferSize::Combos(4),
                TransferSize::Full,
            ],
        };
        let outcome = transfer_protocol(
            &base,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &eval_plan,
            &categories,
            &plan,
            &config,
        )
        .unwrap();
        assert_eq!(outcome.rows.len(), 3);
        assert_eq!(outcome.rows[0].combos_used, 0);
        assert_eq!(outcome.rows[1].combos_used, 4);
        assert_eq!(outcome.rows[2].combos_used, train_plan.len());

        // Zero-shot evaluates the base parameters untouched.
        let direct = data.mean_loss(&model, &base, &eval_plan.combos).unwrap();
        assert_eq!(outcome.rows[0].adapted_loss.total, direct.total);

        // Adaptation on the full budget beats no adaptation on this toy.
        assert!(
            outcome.rows[2].adapted_loss.total < outcome.rows[0].adapted_loss.total,
            "{} !< {}",
            outcome.rows[2].adapted_loss.total,
            outcome.rows[0].adapted_loss.total
        );
        for row in &outcome.rows {
            assert_eq!(row.report.n_total, eval_plan.len());
        }
    }

    #[test]
    fn budget_beyond_the_pool_fails_cleanly() {
        let (source, patterns, targets, train_plan, val_plan, eval_plan, categories) = toy_world();
        let data = TrainData {
            source: &source,
            patterns: &patterns,
            targets: &targets,
            weight_mode: WeightMode::LastLayer,
        };
        let model = ModelConfig::tiny(4);
        let base = init_store(&model, &data, 11).unwrap();
        let config = TrainConfig::default();
        let plan = TransferPlan {
            sizes: vec![TransferSize::Combos(10_000)],
        };
        let err = transfer_protocol(
            &base,
            &data,
            &model,
            &train_plan,
            &val_plan,
            &eval_plan,
            &categories,
            &plan,
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }
}
