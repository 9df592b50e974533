//! Data plumbing between rendered records and the model: feature lookup,
//! the optional tunable encoder path, and per-combo forward/backward steps.

use std::collections::BTreeMap;

use crate::audiogram::HearingLossPattern;
use crate::error::{Error, Result};
use crate::features::{
    fuse_layers, fuse_layers_backward, FeatureSequence, LayerWeights, MockEncoder, WeightMode,
};
use crate::model::{backward, forward_traced, LossBreakdown, ModelConfig, Prediction};
use crate::params::{GradStore, ParamGroup, ParamStore};
use crate::signal::{ConditionLabel, Waveform};
use crate::targets::{ComboKey, ScoreTable, TargetPair};

/// Store name of the learnable layer-fusion logits.
pub const FUSION_LOGITS: &str = "fusion/logits";

/// Register softmax-fusion logits (zeros, i.e. uniform weights) for an
/// n-layer stack. Only weighted-sum fusion has learnable weights.
pub fn register_fusion_weights(store: &mut ParamStore, n_layers: usize) -> Result<()> {
    store.insert_const(FUSION_LOGITS, ParamGroup::FusionWeights, n_layers, 0.0)
}

/// Where a record's model inputs come from, keyed by (utterance, condition).
pub enum FeatureSource {
    /// Features computed ahead of time; the encoder cannot be tuned.
    Precomputed(BTreeMap<(String, ConditionLabel), FeatureSequence>),
    /// Raw audio re-encoded on every step through a tunable encoder.
    Tunable {
        encoder: MockEncoder,
        audio: BTreeMap<(String, ConditionLabel), Waveform>,
    },
}

impl FeatureSource {
    pub fn is_tunable(&self) -> bool {
        matches!(self, FeatureSource::Tunable { .. })
    }

    pub fn record_count(&self) -> usize {
        match self {
            FeatureSource::Precomputed(map) => map.len(),
            FeatureSource::Tunable { audio, .. } => audio.len(),
        }
    }
}

/// Everything one training or evaluation pass needs besides parameters.
pub struct TrainData<'a> {
    pub source: &'a FeatureSource,
    /// Hearing-loss patterns by audiogram id.
    pub patterns: &'a BTreeMap<String, HearingLossPattern>,
    pub targets: &'a ScoreTable,
    /// How encoder layer stacks collapse to features on the tunable path.
    pub weight_mode: WeightMode,
}

impl TrainData<'_> {
    fn pattern_of(&self, key: &ComboKey) -> Result<&HearingLossPattern> {
        self.patterns.get(&key.audiogram_id).ok_or_else(|| {
            Error::InvalidInput(format!("no hearing-loss pattern for {}", key.audiogram_id))
        })
    }

    pub fn target_of(&self, key: &ComboKey) -> Result<TargetPair> {
        self.targets
            .get(key)
            .ok_or_else(|| Error::KeyMismatch(vec![format!("no target for {key}")]))
    }

    /// Verify every combo in a plan has a pattern and a target up front.
    pub fn check_coverage<'k>(&self, combos: impl IntoIterator<Item = &'k ComboKey>) -> Result<()> {
        let mut missing = Vec::new();
        for key in combos {
            if self.targets.get(key).is_none() {
                missing.push(format!("no target for {key}"));
            }
            if !self.patterns.contains_key(&key.audiogram_id) {
                missing.push(format!("no pattern for {key}"));
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            missing.sort();
            missing.dedup();
            Err(Error::KeyMismatch(missing))
        }
    }

    fn layer_weights(&self, store: &ParamStore, n_layers: usize) -> Result<LayerWeights> {
        Ok(match self.weight_mode {
            WeightMode::LastLayer => LayerWeights::uniform(n_layers, WeightMode::LastLayer),
            WeightMode::WeightedSum => LayerWeights {
                logits: store.get1(FUSION_LOGITS)?.to_owned(),
                mode: WeightMode::WeightedSum,
            },
        })
    }

    /// Inference-only forward pass for one combo.
    pub fn predict(
        &self,
        model: &ModelConfig,
        store: &ParamStore,
        key: &ComboKey,
    ) -> Result<Prediction> {
        let pattern = self.pattern_of(key)?;
        let record_key = (key.utterance_id.clone(), key.condition);
        let features = match self.source {
            FeatureSource::Precomputed(map) => map
                .get(&record_key)
                .ok_or_else(|| {
                    Error::KeyMismatch(vec![format!(
                        "no features for {}/{}",
                        key.utterance_id, key.condition
                    )])
                })?
                .clone(),
            FeatureSource::Tunable { encoder, audio } => {
                let wave = audio.get(&record_key).ok_or_else(|| {
                    Error::KeyMismatch(vec![format!(
                        "no audio for {}/{}",
                        key.utterance_id, key.condition
                    )])
                })?;
                let (stack, _) = encoder.embed_traced(store, wave)?;
                let weights = self.layer_weights(store, stack.n_layers())?;
                fuse_layers(&stack, &weights)?
            }
        };
        forward_traced(model, store, &features, pattern).map(|(p, _)| p)
    }

    /// Forward plus backward for one combo, accumulating parameter gradients.
    ///
    /// On the tunable path the feature gradient continues through layer
    /// fusion into the encoder, so fusion logits and encoder parameters
    /// receive gradients too.
    pub fn step_gradients(
        &self,
        model: &ModelConfig,
        store: &ParamStore,
        key: &ComboKey,
        grads: &mut GradStore,
    ) -> Result<LossBreakdown> {
        let pattern = self.pattern_of(key)?;
        let target = self.target_of(key)?;
        let record_key = (key.utterance_id.clone(), key.condition);
        match self.source {
            FeatureSource::Precomputed(map) => {
                let features = map.get(&record_key).ok_or_else(|| {
                    Error::KeyMismatch(vec![format!(
                        "no features for {}/{}",
                        key.utterance_id, key.condition
                    )])
                })?;
                let (pred, trace) = forward_traced(model, store, features, pattern)?;
                let (breakdown, model_grads, _) = backward(store, &trace, &pred, &target)?;
                grads.merge(model_grads)?;
                Ok(breakdown)
            }
            FeatureSource::Tunable { encoder, audio } => {
                let wave = audio.get(&record_key).ok_or_else(|| {
                    Error::KeyMismatch(vec![format!(
                        "no audio for {}/{}",
                        key.utterance_id, key.condition
                    )])
                })?;
                let (stack, enc_trace) = encoder.embed_traced(store, wave)?;
                let weights = self.layer_weights(store, stack.n_layers())?;
                let features = fuse_layers(&stack, &weights)?;
                let (pred, trace) = forward_traced(model, store, &features, pattern)?;
                let (breakdown, model_grads, d_features) =
                    backward(store, &trace, &pred, &target)?;
                grads.merge(model_grads)?;

                let (d_logits, d_stack) = fuse_layers_backward(&stack, &weights, &d_features)?;
                if self.weight_mode == WeightMode::WeightedSum {
                    grads.accumulate(FUSION_LOGITS, d_logits.into_dyn())?;
                }
                let encoder_grads = encoder.backward(store, &enc_trace, &d_stack)?;
                grads.merge(encoder_grads)?;
                Ok(breakdown)
            }
        }
    }

    /// Mean loss over a set of combos without touching gradients.
    pub fn mean_loss(
        &self,
        model: &ModelConfig,
        store: &ParamStore,
        combos: &[ComboKey],
    ) -> Result<LossBreakdown> {
        if combos.is_empty() {
            return Err(Error::InvalidInput("no combos to evaluate".into()));
        }
        let mut acc = LossBreakdown {
            total: 0.0,
            quality: 0.0,
            intelligibility: 0.0,
        };
        for key in combos {
            let pred = self.predict(model, store, key)?;
            let target = self.target_of(key)?;
            acc.add(&crate::model::loss(&pred, &target));
        }
        acc.scale(1.0 / combos.len() as f64);
        Ok(acc)
    }
}
