//! Audiogram pairing: every dataset record is matched with three audiograms
//! from its role's split set (two sampled hearing-loss shapes plus the
//! normal-hearing audiogram).

use std::collections::{BTreeMap, BTreeSet};

use crate::audiogram::{AudiogramSplit, NORMAL_AUDIOGRAM_ID};
use crate::error::{Error, Result};
use crate::rng::rng_for_key;
use crate::signal::{DatasetManifest, Role};
use crate::targets::ComboKey;

/// The (utterance, condition, audiogram) triples of one training or
/// evaluation role.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingPlan {
    pub combos: Vec<ComboKey>,
    pub role: Role,
}

impl PairingPlan {
    pub fn len(&self) -> usize {
        self.combos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combos.is_empty()
    }

    /// Every audiogram id the plan references.
    pub fn audiogram_ids(&self) -> BTreeSet<&str> {
        self.combos.iter().map(|c| c.audiogram_id.as_str()).collect()
    }

    /// Check the three-per-record shape: each (utterance, condition) carries
    /// exactly three distinct audiograms, one of them normal.
    pub fn validate(&self) -> Result<()> {
        let mut per_record: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
        for combo in &self.combos {
            let entry = per_record
                .entry((combo.utterance_id.as_str(), combo.condition.as_str()))
                .or_default();
            if !entry.insert(combo.audiogram_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate pairing triple {combo}"
                )));
            }
        }
        for ((utt, cond), audiograms) in &per_record {
            if audiograms.len() != 3 {
                return Err(Error::InvalidInput(format!(
                    "record {utt}/{cond} pairs {} audiograms, expected 3",
                    audiograms.len()
                )));
            }
            if !audiograms.contains(NORMAL_AUDIOGRAM_ID) {
                return Err(Error::InvalidInput(format!(
                    "record {utt}/{cond} is missing the normal-hearing audiogram"
                )));
            }
        }
        Ok(())
    }
}

/// Pair every record in `manifest` with three audiograms from the split set
/// matching `role`: two distinct hearing-loss audiograms sampled per record,
/// plus the normal-hearing audiogram.
///
/// Deterministic in `seed`; the sample for a record depends only on the seed,
/// role, and the record's identity, so plans are stable under manifest
/// reordering.
pub fn build_pairing(
    manifest: &DatasetManifest,
    split: &AudiogramSplit,
    role: Role,
    seed: u64,
) -> Result<PairingPlan> {
    let pool = match role {
        Role::Train => &split.train,
        Role::Validation => &split.validation,
        Role::Test => &split.test,
    };
    let mut loss_ids: Vec<&str> = pool
        .iter()
        .map(|a| a.id.as_str())
        .filter(|id| *id != NORMAL_AUDIOGRAM_ID)
        .collect();
    loss_ids.sort_unstable();
    loss_ids.dedup();
    if loss_ids.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{role} audiogram pool offers {} hearing-loss audiograms; pairing needs 2 plus normal",
            loss_ids.len()
        )));
    }
    if !pool.iter().any(|a| a.id == NORMAL_AUDIOGRAM_ID) {
        return Err(Error::InvalidInput(format!(
            "{role} audiogram pool is missing the normal-hearing audiogram"
        )));
    }

    let mut combos = Vec::with_capacity(manifest.records.len() * 3);
    for record in &manifest.records {
        let mut rng = rng_for_key(
            seed,
            &format!(
                "pairing/{role}/{}/{}",
                record.utterance_id,
                record.condition.as_str()
            ),
        );
        let picks = rand::seq::index::sample(&mut rng, loss_ids.len(), 2);
        for idx in picks {
            combos.push(ComboKey::new(
                &record.utterance_id,
                record.condition,
                loss_ids[idx],
            ));
        }
        combos.push(ComboKey::new(
            &record.utterance_id,
            record.condition,
            NORMAL_AUDIOGRAM_ID,
        ));
    }
    let plan = PairingPlan { combos, role };
    plan.validate()?;
    Ok(plan)
}

/// Partition utterance ids into `k` near-equal folds.
///
/// Ids are ordered by a seeded hash and dealt round-robin, so assignment is
/// independent of input order and any k consecutive sizes differ by at most
/// one.
pub fn kfold_partition(ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k == 0 {
        return Err(Error::InvalidInput("fold count must be positive".into()));
    }
    if k > ids.len() {
        return Err(Error::InvalidInput(format!(
            "cannot make {k} folds from {} utterances",
            ids.len()
        )));
    }
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::InvalidInput("duplicate utterance ids".into()));
    }

    let mut hashed: Vec<(u64, &String)> = ids
        .iter()
        .map(|id| (crate::rng::split_seed(seed, &format!("fold/{id}")), id))
        .collect();
    hashed.sort_unstable_by(|a, b| a.cmp(b));
    let mut folds = vec![Vec::new(); k];
    for (i, (_, id)) in hashed.into_iter().enumerate() {
        folds[i % k].push(id.clone());
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiogram::{generate_catalog, split_catalog};
    use crate::signal::{ConditionLabel, ManifestMeta, Recipe, UtteranceRecord, PIPELINE_VERSION};

    fn synthetic_manifest(n_utts: usize, conditions: &[ConditionLabel]) -> DatasetManifest {
        let mut records = Vec::new();
        for i in 0..n_utts {
            let utt = format!("utt{i:05}");
            for &condition in conditions {
                records.push(UtteranceRecord {
                    utterance_id: utt.clone(),
                    condition,
                    audio_path: format!("audio/{}/{utt}.wav", condition.as_str()),
                    source_clean_path: format!("clean/{utt}.wav"),
                    snr_db: None,
                    rir_id: None,
                    vocoder_kind: None,
                    audiogram_id: NORMAL_AUDIOGRAM_ID.to_string(),
                    quality_target: None,
                    intelligibility_target: None,
                });
            }
        }
        DatasetManifest {
            records,
            meta: ManifestMeta {
                role: Role::Train,
                seed: 0,
                pipeline_version: PIPELINE_VERSION.to_string(),
                recipe: Recipe {
                    name: "synthetic".into(),
                    role: Role::Train,
                    snr_grid_db: vec![0.0],
                    full_scale_clean: n_utts,
                    full_scale_records: n_utts * conditions.len(),
                },
            },
        }
    }

    fn split() -> AudiogramSplit {
        split_catalog(&generate_catalog(7), 7).unwrap()
    }

    #[test]
    fn every_record_gets_three_audiograms_with_normal() {
        let manifest = synthetic_manifest(10, &ConditionLabel::ALL);
        let plan = build_pairing(&manifest, &split(), Role::Train, 3).unwrap();
        assert_eq!(plan.len(), 10 * 5 * 3);
        plan.validate().unwrap();
    }

    #[test]
    fn single_record_yields_three_combos_including_normal() {
        let manifest = synthetic_manifest(1, &[ConditionLabel::Noisy]);
        let plan = build_pairing(&manifest, &split(), Role::Test, 5).unwrap();
        assert_eq!(plan.len(), 3);
        assert!(plan
            .combos
            .iter()
            .any(|c| c.audiogram_id == NORMAL_AUDIOGRAM_ID));
        let distinct: BTreeSet<&str> =
            plan.combos.iter().map(|c| c.audiogram_id.as_str()).collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn train_and_test_roles_draw_from_their_own_pools() {
        let manifest = synthetic_manifest(40, &ConditionLabel::ALL);
        let split = split();
        let train_pool: BTreeSet<&str> = split.train.iter().map(|a| a.id.as_str()).collect();
        let test_pool: BTreeSet<&str> = split.test.iter().map(|a| a.id.as_str()).collect();

        let train_plan = build_pairing(&manifest, &split, Role::Train, 9).unwrap();
        assert!(train_plan.audiogram_ids().iter().all(|id| train_pool.contains(id)));

        let test_plan = build_pairing(&manifest, &split, Role::Test, 9).unwrap();
        assert!(test_plan.audiogram_ids().iter().all(|id| test_pool.contains(id)));
        // With enough records the sampler exercises the whole pool.
        assert_eq!(test_plan.audiogram_ids().len(), test_pool.len());
    }

    #[test]
    fn plans_are_deterministic_and_order_insensitive() {
        let manifest = synthetic_manifest(12, &ConditionLabel::ALL);
        let mut shuffled = manifest.clone();
        shuffled.records.reverse();
        let split = split();
        let a = build_pairing(&manifest, &split, Role::Train, 11).unwrap();
        let b = build_pairing(&shuffled, &split, Role::Train, 11).unwrap();
        let mut a_sorted = a.combos.clone();
        let mut b_sorted = b.combos.clone();
        a_sorted.sort();
        b_sorted.sort();
        assert_eq!(a_sorted, b_sorted);

        let c = build_pairing(&manifest, &split, Role::Train, 12).unwrap();
        assert_ne!(a.combos, c.combos);
    }

    #[test]
    fn tiny_pool_is_rejected() {
        let manifest = synthetic_manifest(1, &[ConditionLabel::Noisy]);
        let mut split = split();
        split.test.retain(|a| a.id == NORMAL_AUDIOGRAM_ID);
        let err = build_pairing(&manifest, &split, Role::Test, 1).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }

    #[test]
    fn fold_sizes_balance_and_cover_all_ids() {
        let ids: Vec<String> = (0..1594).map(|i| format!("utt{i:05}")).collect();
        let folds = kfold_partition(&ids, 5, 2).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![318, 319, 319, 319, 319]);
        let union: BTreeSet<&String> = folds.iter().flatten().collect();
        assert_eq!(union.len(), 1594);
    }

    #[test]
    fn fold_assignment_ignores_input_order() {
        let ids: Vec<String> = (0..97).map(|i| format!("utt{i:03}")).collect();
        let mut reversed = ids.clone();
        reversed.reverse();
        let a = kfold_partition(&ids, 5, 3).unwrap();
        let b = kfold_partition(&reversed, 5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_folds_are_rejected() {
        let ids: Vec<String> = (0..3).map(|i| format!("utt{i}")).collect();
        assert!(kfold_partition(&ids, 4, 0).is_err());
        assert!(kfold_partition(&ids, 0, 0).is_err());
    }
}
