//! K-fold cross-validation: partition utterances, train a fresh model per
//! fold, evaluate on the held-out partition, and average the fold reports.

use std::collections::{BTreeMap, BTreeSet};

use crate::audiogram::{AudiogramCategory, AudiogramSplit};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_reports, build_report, EvalReport};
use crate::model::ModelConfig;
use crate::rng::split_seed;
use crate::signal::{DatasetManifest, Role};
use crate::train::data::TrainData;
use crate::train::finetune::finetune;
use crate::train::pairing::{build_pairing, kfold_partition};
use crate::train::trainer::{evaluate, init_store};
use crate::train::TrainConfig;

/// Results of one cross-validation run.
#[derive(Debug, Clone)]
pub struct KfoldOutcome {
    pub fold_reports: Vec<EvalReport>,
    /// Mean of the per-fold metrics.
    pub aggregate: EvalReport,
    /// Test utterances of each fold, in fold order.
    pub fold_utterances: Vec<Vec<String>>,
}

fn manifest_subset(manifest: &DatasetManifest, ids: &BTreeSet<&str>, role: Role) -> DatasetManifest {
    let mut subset = DatasetManifest {
        records: manifest
            .records
            .iter()
            .filter(|r| ids.contains(r.utterance_id.as_str()))
            .cloned()
            .collect(),
        meta: manifest.meta.clone(),
    };
    subset.meta.role = role;
    subset
}

/// Run k-fold cross-validation over `manifest`'s utterances.
///
/// All conditions of an utterance stay in the same fold. Each fold trains a
/// freshly initialized model (per-fold seed) on the other folds, holding out
/// a slice of the training utterances for early stopping, then evaluates on
/// the fold itself with test-set audiograms.
pub fn kfold_cv(
    manifest: &DatasetManifest,
    split: &AudiogramSplit,
    categories: &BTreeMap<String, AudiogramCategory>,
    data: &TrainData,
    model: &ModelConfig,
    config: &TrainConfig,
    k: usize,
) -> Result<KfoldOutcome> {
    let ids = manifest.utterance_ids();
    let folds = kfold_partition(&ids, k, config.seed)?;
    if folds.iter().any(|f| f.len() < 2) {
        return Err(Error::InvalidInput(format!(
            "{k} folds over {} utterances leave folds too small to validate",
            ids.len()
        )));
    }

    let mut fold_reports = Vec::with_capacity(k);
    let mut fold_utterances = Vec::with_capacity(k);
    for fold in 0..k {
        let test_ids: BTreeSet<&str> = folds[fold].iter().map(String::as_str).collect();
        let rest: Vec<String> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        // Hold out a slice of the remaining utterances for early stopping.
        let val_k = rest.len().min(5).max(2);
        let val_groups = kfold_partition(
            &rest,
            val_k,
            split_seed(config.seed, &format!("kfold/val/{fold}")),
        )?;
        let val_ids: BTreeSet<&str> = val_groups[0].iter().map(String::as_str).collect();
        let train_ids: BTreeSet<&str> = rest
            .iter()
            .map(String::as_str)
            .filter(|id| !val_ids.contains(id))
            .collect();

        let train_manifest = manifest_subset(manifest, &train_ids, Role::Train);
        let val_manifest = manifest_subset(manifest, &val_ids, Role::Validation);
        let test_manifest = manifest_subset(manifest, &test_ids, Role::Test);

        let train_plan = build_pairing(&train_manifest, split, Role::Train, config.seed)?;
        let val_plan = build_pairing(&val_manifest, split, Role::Validation, config.seed)?;
        let test_plan = build_pairing(&test_manifest, split, Role::Test, config.seed)?;

        let mut store = init_store(
            model,
            data,
            split_seed(config.seed, &format!("kfold/init/{fold}")),
        )?;
        finetune(&mut store, data, model, &train_plan, &val_plan, config)?;

        let predictions = evaluate(&store, data, model, &test_plan)?;
        let fold_targets = data.targets.restricted_to(predictions.keys())?;
        fold_reports.push(build_report(&predictions, &fold_targets, categories)?);
        fold_utterances.push(folds[fold].clone());
    }

    let aggregate = aggregate_reports(&fold_reports)?;
    Ok(KfoldOutcome {
        fold_reports,
        aggregate,
        fold_utterances,
    })
}

/// Convenience check used by callers: the fold test partitions are pairwise
/// disjoint and their union covers every utterance.
pub fn verify_fold_cover(outcome: &KfoldOutcome, manifest: &DatasetManifest) -> Result<()> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for fold in &outcome.fold_utterances {
        for id in fold {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!(
                    "utterance {id} appears in two folds"
                )));
            }
        }
    }
    let all: BTreeSet<String> = manifest.utterance_ids().into_iter().collect();
    if seen.len() != all.len() || !all.iter().all(|id| seen.contains(id.as_str())) {
        return Err(Error::InvalidInput(
            "fold union does not cover the manifest".into(),
        ));
    }
    Ok(())
}
