//! Signal pipeline: five-condition corpus construction (noisy, enhanced,
//! reverberation, dereverberation, vocoded) plus listener-side presentation
//! (SPL leveling and NAL-R amplification).

mod corpus;
mod dsp;
mod enhance;
mod filt;
mod manifest;
mod nalr;
mod vocoder;
mod wav;

pub use corpus::{rir_decay_seconds, synthesize_source_pools, CorpusPools, CorpusSpec};
pub use dsp::{
    apply_reverb, measure_snr_db, mix_at_snr, prepare_noise_segment, rms, set_level, REF_DB_SPL,
};
pub use enhance::{EnhancementProvider, IdentityEnhancer, SpectralSubtraction};
pub use manifest::{
    build_manifest, read_manifest_jsonl, read_rir_pool, render_manifest, write_manifest_jsonl,
    CleanAsset, DatasetManifest, ManifestMeta, NoiseAsset, Recipe, RenderAssets, RirAsset, Role,
    PIPELINE_VERSION,
};
pub use nalr::{apply_nalr, nalr_gains};
pub use vocoder::vocode;
pub use wav::{load_audio, read_wav, resample, write_wav};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Room impulse response with its published amplitude scale factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub scale_factor: f64,
}

impl RoomImpulseResponse {
    pub fn validate(&self) -> Result<()> {
        if self.samples.iter().map(|s| s * s).sum::<f64>() == 0.0 {
            return Err(Error::ZeroEnergyRir {
                id: self.id.clone(),
            });
        }
        if self.scale_factor <= 0.0 || !self.scale_factor.is_finite() {
            return Err(Error::InvalidInput(format!(
                "rir {} has non-positive scale factor {}",
                self.id, self.scale_factor
            )));
        }
        Ok(())
    }
}

/// The five corpus conditions.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ConditionLabel {
    Noisy,
    Enhanced,
    Reverberation,
    Dereverberation,
    Vocoded,
}

impl ConditionLabel {
    pub const ALL: [ConditionLabel; 5] = [
        ConditionLabel::Noisy,
        ConditionLabel::Enhanced,
        ConditionLabel::Reverberation,
        ConditionLabel::Dereverberation,
        ConditionLabel::Vocoded,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionLabel::Noisy => "noisy",
            ConditionLabel::Enhanced => "enhanced",
            ConditionLabel::Reverberation => "reverberation",
            ConditionLabel::Dereverberation => "dereverberation",
            ConditionLabel::Vocoded => "vocoded",
        }
    }
}

impl fmt::Display for ConditionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditionLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown condition '{s}'")))
    }
}

/// Carrier flavor for the channel vocoder.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum VocoderKind {
    Tone,
    Noise,
}

impl VocoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VocoderKind::Tone => "tone",
            VocoderKind::Noise => "noise",
        }
    }
}

impl fmt::Display for VocoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One synthesized utterance in a dataset manifest.
///
/// `audiogram_id` is the default presentation audiogram assigned at manifest
/// build time; training-time pairing expands each record to its full set of
/// audiograms without touching the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub utterance_id: String,
    pub condition: ConditionLabel,
    pub audio_path: String,
    pub source_clean_path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rir_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub vocoder_kind: Option<VocoderKind>,
    pub audiogram_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quality_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub intelligibility_target: Option<f64>,
}

impl UtteranceRecord {
    /// Check the per-condition metadata invariants.
    pub fn validate(&self) -> Result<()> {
        let needs_snr = matches!(
            self.condition,
            ConditionLabel::Noisy | ConditionLabel::Enhanced
        );
        if needs_snr != self.snr_db.is_some() {
            return Err(Error::InvalidInput(format!(
                "record ({}, {}): snr_db must be present iff condition is noisy/enhanced",
                self.utterance_id, self.condition
            )));
        }
        let needs_rir = matches!(
            self.condition,
            ConditionLabel::Reverberation | ConditionLabel::Dereverberation
        );
        if needs_rir != self.rir_id.is_some() {
            return Err(Error::InvalidInput(format!(
                "record ({}, {}): rir_id must be present iff condition is reverb/dereverb",
                self.utterance_id, self.condition
            )));
        }
        let needs_vocoder = self.condition == ConditionLabel::Vocoded;
        if needs_vocoder != self.vocoder_kind.is_some() {
            return Err(Error::InvalidInput(format!(
                "record ({}, {}): vocoder_kind must be present iff condition is vocoded",
                self.utterance_id, self.condition
            )));
        }
        for (name, value) in [
            ("quality_target", self.quality_target),
            ("intelligibility_target", self.intelligibility_target),
        ] {
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "record ({}, {}): {name} {v} outside [0, 1]",
                        self.utterance_id, self.condition
                    )));
                }
            }
        }
        Ok(())
    }
}
