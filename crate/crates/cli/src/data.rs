//! Bridges the on-disk dataset to the in-memory structures training and
//! evaluation consume: the audiogram catalog, target scores, and features
//! from the configured provider.

use std::collections::BTreeMap;
use std::fs::File;

use hasa_core::audiogram::{
    category_index, make_pattern, read_catalog_csv, split_catalog, AudiogramCategory,
    AudiogramSplit, HearingLossPattern,
};
use hasa_core::error::{Error, Result};
use hasa_core::features::{
    fuse_layers, spectrogram, EmbeddingProvider, FeatureSequence, LayerWeights, MockEncoder,
    MockEncoderConfig, WeightMode, SPECTROGRAM_PROVIDER_ID,
};
use hasa_core::model::CheckpointMeta;
use hasa_core::signal::{load_audio, ConditionLabel, DatasetManifest, Waveform};
use hasa_core::targets::{import_scores, ScoreTable};
use hasa_core::train::FeatureSource;

use crate::config::{ProviderKind, RunConfig};

/// The `mock` provider stands in for a frozen pretrained encoder, so its
/// weights are fixed rather than derived from the run seed.
const MOCK_FROZEN_SEED: u64 = 0x6d6f_636b;

/// Spectrogram analysis geometry: 32 ms frames, 20 ms hop.
const SPEC_FRAME_MS: f64 = 32.0;
const SPEC_HOP_MS: f64 = 20.0;

/// Audiogram split, patterns, and targets shared by every training and
/// evaluation command.
pub struct EvalContext {
    pub split: AudiogramSplit,
    pub categories: BTreeMap<String, AudiogramCategory>,
    pub patterns: BTreeMap<String, HearingLossPattern>,
    pub targets: ScoreTable,
}

/// Load the catalog and target table written by `prepare`, and derive the
/// seed-dependent train/validation/test audiogram split.
pub fn load_context(config: &RunConfig) -> Result<EvalContext> {
    let catalog_file = File::open(config.catalog_path())?;
    let catalog = read_catalog_csv(catalog_file)?;
    let split = split_catalog(&catalog, config.seed)?;
    let categories = category_index(&catalog);
    let patterns = catalog
        .iter()
        .map(|a| (a.id.clone(), make_pattern(a)))
        .collect();
    let targets = import_scores(&config.scores_path())?;
    Ok(EvalContext {
        split,
        categories,
        patterns,
        targets,
    })
}

/// A feature source plus the identity facts recorded in checkpoints.
pub struct BuiltFeatures {
    pub source: FeatureSource,
    pub feature_dim: usize,
    pub provider_version: String,
    pub weight_mode: WeightMode,
}

fn collect_audio(
    config: &RunConfig,
    manifests: &[&DatasetManifest],
) -> Result<BTreeMap<(String, ConditionLabel), Waveform>> {
    let mut audio = BTreeMap::new();
    for manifest in manifests {
        for record in &manifest.records {
            let key = (record.utterance_id.clone(), record.condition);
            if !audio.contains_key(&key) {
                audio.insert(key, load_audio(&config.data_dir.join(&record.audio_path))?);
            }
        }
    }
    if audio.is_empty() {
        return Err(Error::InvalidInput(
            "the given manifests contain no records".into(),
        ));
    }
    Ok(audio)
}

fn precompute_with_encoder(
    encoder: &MockEncoder,
    audio: BTreeMap<(String, ConditionLabel), Waveform>,
) -> Result<BTreeMap<(String, ConditionLabel), FeatureSequence>> {
    let weights = LayerWeights::uniform(encoder.layers(), WeightMode::LastLayer);
    let mut features = BTreeMap::new();
    for (key, wav) in audio {
        let stack = encoder.embed(&key.0, &wav)?;
        features.insert(key, fuse_layers(&stack, &weights)?);
    }
    Ok(features)
}

/// Turn rendered audio into the configured feature source. Loads every
/// unique (utterance, condition) referenced by the manifests exactly once.
pub fn build_features(
    config: &RunConfig,
    manifests: &[&DatasetManifest],
) -> Result<BuiltFeatures> {
    let kind = config.provider.kind;
    let audio = collect_audio(config, manifests)?;
    match kind {
        ProviderKind::Spectrogram => {
            let mut features = BTreeMap::new();
            for (key, wav) in audio {
                features.insert(key, spectrogram(&wav, SPEC_FRAME_MS, SPEC_HOP_MS)?);
            }
            let feature_dim = features
                .values()
                .next()
                .expect("collect_audio rejects empty manifests")
                .frames
                .ncols();
            Ok(BuiltFeatures {
                source: FeatureSource::Precomputed(features),
                feature_dim,
                provider_version: format!("{SPECTROGRAM_PROVIDER_ID}-v1"),
                weight_mode: WeightMode::LastLayer,
            })
        }
        ProviderKind::Mock => {
            let encoder = MockEncoder::new(MockEncoderConfig::default_ssl(MOCK_FROZEN_SEED));
            let feature_dim = encoder.dim();
            let provider_version =
                format!("{}-{}", encoder.provider_id(), encoder.version());
            let features = precompute_with_encoder(&encoder, audio)?;
            Ok(BuiltFeatures {
                source: FeatureSource::Precomputed(features),
                feature_dim,
                provider_version,
                weight_mode: WeightMode::LastLayer,
            })
        }
        ProviderKind::SslLl | ProviderKind::SslWs | ProviderKind::Whisper => {
            let encoder_config = match kind {
                ProviderKind::Whisper => MockEncoderConfig::whisper_shaped(config.seed),
                _ => MockEncoderConfig::default_ssl(config.seed),
            };
            let encoder = MockEncoder::new(encoder_config);
            let feature_dim = encoder.dim();
            let provider_version =
                format!("{}-{}", encoder.provider_id(), encoder.version());
            Ok(BuiltFeatures {
                source: FeatureSource::Tunable { encoder, audio },
                feature_dim,
                provider_version,
                weight_mode: kind.weight_mode(),
            })
        }
    }
}

/// Reject a checkpoint whose feature pathway does not match this run's
/// provider configuration.
pub fn check_checkpoint_compat(
    meta: &CheckpointMeta,
    kind: ProviderKind,
    built: &BuiltFeatures,
) -> Result<()> {
    if meta.provider_id != kind.id_str() {
        return Err(Error::InvalidInput(format!(
            "checkpoint was trained with feature provider '{}', this run is configured for '{}'",
            meta.provider_id,
            kind.id_str()
        )));
    }
    if meta.layer_weight_mode != Some(built.weight_mode) {
        return Err(Error::InvalidInput(format!(
            "checkpoint fuses encoder layers with {:?}, this run uses {:?}",
            meta.layer_weight_mode, built.weight_mode
        )));
    }
    if meta.model_config.feature_dim_in != built.feature_dim {
        return Err(Error::InvalidInput(format!(
            "checkpoint expects {}-dim features, provider '{}' yields {}",
            meta.model_config.feature_dim_in,
            kind.id_str(),
            built.feature_dim
        )));
    }
    meta.model_config.validate()
}
