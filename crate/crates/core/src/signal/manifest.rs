//! Dataset manifests: plan the five-condition corpus over a clean utterance
//! pool, render the audio deterministically, and serialize as JSON lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for_key, split_seed};
use crate::signal::dsp::{apply_reverb, mix_at_snr, prepare_noise_segment};
use crate::signal::enhance::EnhancementProvider;
use crate::signal::vocoder::vocode;
use crate::signal::wav::{load_audio, write_wav};
use crate::signal::{
    ConditionLabel, RoomImpulseResponse, UtteranceRecord, VocoderKind, Waveform,
};

/// Version stamp recorded in manifest provenance.
pub const PIPELINE_VERSION: &str = "1.0.0";

/// Channel count used by the vocoded condition.
const VOCODER_CHANNELS: usize = 8;

/// Which split a manifest belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "validation",
            Role::Test => "test",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A clean source utterance on disk.
#[derive(Debug, Clone)]
pub struct CleanAsset {
    pub utterance_id: String,
    /// Path relative to the asset root.
    pub path: String,
}

/// A noise recording on disk.
#[derive(Debug, Clone)]
pub struct NoiseAsset {
    pub noise_id: String,
    pub path: String,
}

/// Corpus construction parameters plus the full-scale constants of the
/// reference corpus the recipe mirrors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub name: String,
    pub role: Role,
    pub snr_grid_db: Vec<f64>,
    /// Clean-utterance count of the corpus at full scale.
    pub full_scale_clean: usize,
    /// Total record count at full scale (clean count times five conditions).
    pub full_scale_records: usize,
}

impl Recipe {
    pub fn in_domain() -> Self {
        Recipe {
            name: "in-domain".into(),
            role: Role::Train,
            snr_grid_db: vec![15.0, 10.0, 5.0, 0.0],
            full_scale_clean: 1_594,
            full_scale_records: 7_970,
        }
    }

    pub fn ood_train() -> Self {
        Recipe {
            name: "ood-train".into(),
            role: Role::Train,
            snr_grid_db: vec![15.0, 10.0, 5.0, 0.0],
            full_scale_clean: 4_620,
            full_scale_records: 23_100,
        }
    }

    pub fn ood_test() -> Self {
        Recipe {
            name: "ood-test".into(),
            role: Role::Test,
            snr_grid_db: vec![17.5, 12.5, 7.5, 2.5],
            full_scale_clean: 1_260,
            full_scale_records: 6_300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(Error::InvalidInput(format!(
                "recipe {}: empty SNR grid",
                self.name
            )));
        }
        if self.full_scale_records != self.full_scale_clean * ConditionLabel::ALL.len() {
            return Err(Error::InvalidInput(format!(
                "recipe {}: {} full-scale records is not {} clean x 5 conditions",
                self.name, self.full_scale_records, self.full_scale_clean
            )));
        }
        Ok(())
    }
}

/// Provenance carried alongside manifest records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub role: Role,
    pub seed: u64,
    pub pipeline_version: String,
    pub recipe: Recipe,
}

/// A planned corpus: one record per (clean utterance, condition).
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub records: Vec<UtteranceRecord>,
    pub meta: ManifestMeta,
}

impl DatasetManifest {
    /// Check record invariants, triple uniqueness, and per-condition balance.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        let mut per_condition: BTreeMap<ConditionLabel, usize> = BTreeMap::new();
        for r in &self.records {
            r.validate()?;
            let key = (r.utterance_id.clone(), r.condition, r.audiogram_id.clone());
            if seen.insert(key, ()).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate manifest triple ({}, {}, {})",
                    r.utterance_id, r.condition, r.audiogram_id
                )));
            }
            *per_condition.entry(r.condition).or_default() += 1;
        }
        if !self.records.is_empty() {
            let counts: Vec<usize> = ConditionLabel::ALL
                .iter()
                .map(|c| per_condition.get(c).copied().unwrap_or(0))
                .collect();
            if counts.iter().any(|&c| c != counts[0]) {
                return Err(Error::InvalidInput(format!(
                    "per-condition counts are unbalanced: {counts:?}"
                )));
            }
        }
        Ok(())
    }

    /// Unique utterance ids, sorted.
    pub fn utterance_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .records
            .iter()
            .map(|r| r.utterance_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

fn audio_rel_path(condition: ConditionLabel, utterance_id: &str) -> String {
    format!("audio/{condition}/{utterance_id}.wav")
}

/// Plan the five-condition corpus over the clean pool.
///
/// Deterministic in `seed`: every random choice draws from a stream keyed by
/// (seed, condition, utterance id), so the plan is independent of input
/// ordering and reruns are byte-identical. Rendering re-derives its own
/// choices (noise segment offsets, carrier noise) from the same seed.
pub fn build_manifest(
    clean_set: &[CleanAsset],
    noise_set: &[NoiseAsset],
    rir_set: &[RirAsset],
    recipe: &Recipe,
    seed: u64,
    asset_root: &Path,
) -> Result<DatasetManifest> {
    recipe.validate()?;
    let mut missing: Vec<String> = Vec::new();
    for asset in clean_set {
        if !asset_root.join(&asset.path).is_file() {
            missing.push(format!("clean: {}", asset.path));
        }
    }
    for asset in noise_set {
        if !asset_root.join(&asset.path).is_file() {
            missing.push(format!("noise: {}", asset.path));
        }
    }
    for asset in rir_set {
        if !asset_root.join(&asset.path).is_file() {
            missing.push(format!("rir: {}", asset.path));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingAssets(missing));
    }
    if !clean_set.is_empty() {
        if noise_set.is_empty() {
            return Err(Error::MissingAssets(vec![
                "noise pool is empty (noisy/enhanced conditions need noise)".into(),
            ]));
        }
        if rir_set.is_empty() {
            return Err(Error::MissingAssets(vec![
                "rir pool is empty (reverb/dereverb conditions need impulse responses)".into(),
            ]));
        }
    }

    let mut clean_sorted: Vec<&CleanAsset> = clean_set.iter().collect();
    clean_sorted.sort_by(|a, b| a.utterance_id.cmp(&b.utterance_id));

    // Tone/noise carrier split: shuffle utterances, first half tone, so any
    // even-sized pool splits exactly in half.
    let mut vocoder_order: Vec<usize> = (0..clean_sorted.len()).collect();
    let mut shuffle_rng = rng_for_key(seed, "manifest/vocoder-split");
    for i in (1..vocoder_order.len()).rev() {
        vocoder_order.swap(i, shuffle_rng.random_range(0..=i));
    }
    let half = clean_sorted.len().div_ceil(2);
    let mut vocoder_kind = vec![VocoderKind::Noise; clean_sorted.len()];
    for &idx in vocoder_order.iter().take(half) {
        vocoder_kind[idx] = VocoderKind::Tone;
    }

    let mut records = Vec::with_capacity(clean_sorted.len() * 5);
    for (i, asset) in clean_sorted.iter().enumerate() {
        let utt = &asset.utterance_id;
        let pick_snr = |cond: &str| {
            let mut rng = rng_for_key(seed, &format!("manifest/{cond}/{utt}"));
            recipe.snr_grid_db[rng.random_range(0..recipe.snr_grid_db.len())]
        };
        let pick_rir = |cond: &str| {
            let mut rng = rng_for_key(seed, &format!("manifest/{cond}/{utt}"));
            rir_set[rng.random_range(0..rir_set.len())].rir_id.clone()
        };
        for condition in ConditionLabel::ALL {
            let mut record = UtteranceRecord {
                utterance_id: utt.clone(),
                condition,
                audio_path: audio_rel_path(condition, utt),
                source_clean_path: asset.path.clone(),
                snr_db: None,
                rir_id: None,
                vocoder_kind: None,
                audiogram_id: crate::audiogram::NORMAL_AUDIOGRAM_ID.to_string(),
                quality_target: None,
                intelligibility_target: None,
            };
            match condition {
                ConditionLabel::Noisy => record.snr_db = Some(pick_snr("noisy")),
                ConditionLabel::Enhanced => record.snr_db = Some(pick_snr("enhanced")),
                ConditionLabel::Reverberation => record.rir_id = Some(pick_rir("reverb")),
                ConditionLabel::Dereverberation => record.rir_id = Some(pick_rir("dereverb")),
                ConditionLabel::Vocoded => record.vocoder_kind = Some(vocoder_kind[i]),
            }
            records.push(record);
        }
    }

    let manifest = DatasetManifest {
        records,
        meta: ManifestMeta {
            role: recipe.role,
            seed,
            pipeline_version: PIPELINE_VERSION.into(),
            recipe: recipe.clone(),
        },
    };
    manifest.validate()?;
    Ok(manifest)
}

/// An impulse response on disk with its published scale factor.
#[derive(Debug, Clone)]
pub struct RirAsset {
    pub rir_id: String,
    pub path: String,
    pub scale_factor: f64,
}

/// Load a RIR pool directory: WAV files plus a `rirs.csv` sidecar with
/// `rir_id,scale_factor` rows.
pub fn read_rir_pool(dir: &Path) -> Result<Vec<RirAsset>> {
    let csv_path = dir.join("rirs.csv");
    let mut reader = csv::Reader::from_path(&csv_path)?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        if row.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "rirs.csv: expected 2 fields, got {}",
                row.len()
            )));
        }
        let rir_id = row[0].to_string();
        let scale_factor: f64 = row[1].trim().parse().map_err(|_| {
            Error::InvalidInput(format!("rirs.csv: bad scale factor '{}'", &row[1]))
        })?;
        out.push(RirAsset {
            path: format!("{rir_id}.wav"),
            rir_id,
            scale_factor,
        });
    }
    out.sort_by(|a, b| a.rir_id.cmp(&b.rir_id));
    Ok(out)
}

/// Loaded audio pools for rendering.
pub struct RenderAssets {
    pub noise: BTreeMap<String, Waveform>,
    pub rirs: BTreeMap<String, RoomImpulseResponse>,
}

impl RenderAssets {
    /// Load every noise and RIR referenced by the pools.
    pub fn load(asset_root: &Path, noise_set: &[NoiseAsset], rir_set: &[RirAsset]) -> Result<Self> {
        let mut noise = BTreeMap::new();
        for asset in noise_set {
            noise.insert(
                asset.noise_id.clone(),
                load_audio(&asset_root.join(&asset.path))?,
            );
        }
        let mut rirs = BTreeMap::new();
        for asset in rir_set {
            let wav = load_audio(&asset_root.join(&asset.path))?;
            let rir = RoomImpulseResponse {
                id: asset.rir_id.clone(),
                samples: wav.samples,
                sample_rate: wav.sample_rate,
                scale_factor: asset.scale_factor,
            };
            rir.validate()?;
            rirs.insert(asset.rir_id.clone(), rir);
        }
        Ok(RenderAssets { noise, rirs })
    }
}

fn pick_noise<'a>(
    assets: &'a RenderAssets,
    seed: u64,
    condition: ConditionLabel,
    utt: &str,
) -> &'a Waveform {
    let ids: Vec<&String> = assets.noise.keys().collect();
    let mut rng = rng_for_key(seed, &format!("render/{condition}-noise/{utt}"));
    &assets.noise[ids[rng.random_range(0..ids.len())]]
}

/// Synthesize one record's audio from its clean source.
fn render_record(
    record: &UtteranceRecord,
    clean: &Waveform,
    assets: &RenderAssets,
    seed: u64,
    enhancer: &dyn EnhancementProvider,
) -> Result<Waveform> {
    let utt = &record.utterance_id;
    let mut out = match record.condition {
        ConditionLabel::Noisy | ConditionLabel::Enhanced => {
            let snr = record.snr_db.expect("validated: snr present");
            let noise = pick_noise(assets, seed, record.condition, utt);
            let mut rng =
                rng_for_key(seed, &format!("render/{}-offset/{utt}", record.condition));
            let segment = prepare_noise_segment(noise, clean.len(), &mut rng)?;
            let mixed = mix_at_snr(clean, &segment, snr)?;
            if record.condition == ConditionLabel::Enhanced {
                enhancer.enhance_for(&mixed, utt)?
            } else {
                mixed
            }
        }
        ConditionLabel::Reverberation | ConditionLabel::Dereverberation => {
            let rir_id = record.rir_id.as_ref().expect("validated: rir present");
            let rir = assets.rirs.get(rir_id).ok_or_else(|| {
                Error::MissingAssets(vec![format!("rir {rir_id} referenced by {utt}")])
            })?;
            let reverbed = apply_reverb(clean, rir)?;
            if record.condition == ConditionLabel::Dereverberation {
                enhancer.enhance_for(&reverbed, utt)?
            } else {
                reverbed
            }
        }
        ConditionLabel::Vocoded => {
            let kind = record.vocoder_kind.expect("validated: kind present");
            vocode(
                clean,
                kind,
                VOCODER_CHANNELS,
                split_seed(seed, &format!("render/vocoded/{utt}")),
            )?
        }
    };
    // Keep amplitudes inside [-1, 1] without clipping distortion.
    let peak = out.samples.iter().fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > 1.0 {
        for s in &mut out.samples {
            *s /= peak;
        }
    }
    Ok(out)
}

/// Render every record's audio under `out_dir`, in parallel over records.
///
/// Each record's synthesis is a pure function of (seed, record, assets), so
/// the output files are byte-identical across runs and thread schedules.
pub fn render_manifest(
    manifest: &DatasetManifest,
    asset_root: &Path,
    assets: &RenderAssets,
    out_dir: &Path,
    enhancer: &dyn EnhancementProvider,
) -> Result<()> {
    manifest.validate()?;
    let mut clean_cache: BTreeMap<String, Waveform> = BTreeMap::new();
    for record in &manifest.records {
        if !clean_cache.contains_key(&record.source_clean_path) {
            clean_cache.insert(
                record.source_clean_path.clone(),
                load_audio(&asset_root.join(&record.source_clean_path))?,
            );
        }
    }
    manifest
        .records
        .par_iter()
        .map(|record| {
            let clean = &clean_cache[&record.source_clean_path];
            let rendered = render_record(record, clean, assets, manifest.meta.seed, enhancer)?;
            write_wav(&out_dir.join(&record.audio_path), &rendered)
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}

/// Write records as JSON lines plus a `.meta.json` provenance sidecar.
pub fn write_manifest_jsonl(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    for record in &manifest.records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    let meta_path = meta_path_for(path);
    fs::write(meta_path, serde_json::to_string_pretty(&manifest.meta)?)?;
    Ok(())
}

/// Read a JSONL manifest and its provenance sidecar.
pub fn read_manifest_jsonl(path: &Path) -> Result<DatasetManifest> {
    let meta: ManifestMeta = serde_json::from_str(&fs::read_to_string(meta_path_for(path))?)?;
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    let manifest = DatasetManifest { records, meta };
    manifest.validate()?;
    Ok(manifest)
}

fn meta_path_for(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}
