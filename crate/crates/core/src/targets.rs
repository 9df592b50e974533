//! Ground-truth quality/intelligibility targets: imported score tables and a
//! deterministic synthetic provider for desk-scale end-to-end runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audiogram::HearingLossPattern;
use crate::error::{Error, Result};
use crate::rng::{rng_for_key, split_seed};
use crate::signal::{ConditionLabel, UtteranceRecord, VocoderKind};

/// Identifies one scored stimulus: an utterance under a condition, heard
/// through an audiogram.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComboKey {
    pub utterance_id: String,
    pub condition: ConditionLabel,
    pub audiogram_id: String,
}

impl ComboKey {
    pub fn new(utterance_id: &str, condition: ConditionLabel, audiogram_id: &str) -> Self {
        ComboKey {
            utterance_id: utterance_id.to_string(),
            condition,
            audiogram_id: audiogram_id.to_string(),
        }
    }
}

impl fmt::Display for ComboKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}|{}|{}",
            self.utterance_id, self.condition, self.audiogram_id
        )
    }
}

/// A quality/intelligibility target pair, each in [0, 1], higher is better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    pub quality: f64,
    pub intelligibility: f64,
}

impl TargetPair {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("quality", self.quality),
            ("intelligibility", self.intelligibility),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "{name} target {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Immutable map from stimulus to target pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreTable {
    entries: BTreeMap<ComboKey, TargetPair>,
}

impl ScoreTable {
    pub fn new() -> Self {
        ScoreTable::default()
    }

    /// Add an entry; rejects out-of-range scores and duplicate keys.
    pub fn insert(&mut self, key: ComboKey, pair: TargetPair) -> Result<()> {
        pair.validate()?;
        if self.entries.contains_key(&key) {
            return Err(Error::ScoreTable(format!("duplicate key {key}")));
        }
        self.entries.insert(key, pair);
        Ok(())
    }

    pub fn get(&self, key: &ComboKey) -> Option<TargetPair> {
        self.entries.get(key).copied()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ComboKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ComboKey, &TargetPair)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The sub-table holding exactly `keys`; every key must be present.
    pub fn restricted_to<'a>(
        &self,
        keys: impl IntoIterator<Item = &'a ComboKey>,
    ) -> Result<ScoreTable> {
        let mut subset = ScoreTable::new();
        let mut missing = Vec::new();
        for key in keys {
            match self.entries.get(key) {
                Some(pair) if !subset.entries.contains_key(key) => {
                    subset.entries.insert(key.clone(), *pair);
                }
                Some(_) => {}
                None => missing.push(format!("no target for {key}")),
            }
        }
        if missing.is_empty() {
            Ok(subset)
        } else {
            Err(Error::KeyMismatch(missing))
        }
    }

    /// Fail-fast join check: every requested key must be present. Missing
    /// keys are all listed, not just the first.
    pub fn check_coverage<'a>(&self, keys: impl IntoIterator<Item = &'a ComboKey>) -> Result<()> {
        let missing: Vec<String> = keys
            .into_iter()
            .filter(|k| !self.entries.contains_key(k))
            .map(|k| format!("no target for {k}"))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::KeyMismatch(missing))
        }
    }

    /// Write as CSV with header `utterance_id,condition,audiogram_id,hasqi,haspi`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["utterance_id", "condition", "audiogram_id", "hasqi", "haspi"])?;
        for (key, pair) in &self.entries {
            writer.write_record([
                key.utterance_id.as_str(),
                key.condition.as_str(),
                key.audiogram_id.as_str(),
                &format!("{:.6}", pair.quality),
                &format!("{:.6}", pair.intelligibility),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Read a score CSV (`utterance_id,condition,audiogram_id,hasqi,haspi`).
/// Errors carry the 1-based data row number.
pub fn import_scores(path: &Path) -> Result<ScoreTable> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        let expected = ["utterance_id", "condition", "audiogram_id", "hasqi", "haspi"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::ScoreTable(format!(
                "bad header {:?}, expected {expected:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
    }
    let mut table = ScoreTable::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        if row.len() != 5 {
            return Err(Error::ScoreTable(format!(
                "row {row_no}: expected 5 fields, got {}",
                row.len()
            )));
        }
        let condition: ConditionLabel = row[1]
            .trim()
            .parse()
            .map_err(|e: Error| Error::ScoreTable(format!("row {row_no}: {e}")))?;
        let parse_score = |field: &str, name: &str| -> Result<f64> {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::ScoreTable(format!("row {row_no}: bad {name} '{field}'")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::ScoreTable(format!(
                    "row {row_no}: {name} {v} outside [0, 1]"
                )));
            }
            Ok(v)
        };
        let pair = TargetPair {
            quality: parse_score(&row[3], "hasqi")?,
            intelligibility: parse_score(&row[4], "haspi")?,
        };
        let key = ComboKey::new(row[0].trim(), condition, row[2].trim());
        table
            .insert(key, pair)
            .map_err(|e| Error::ScoreTable(format!("row {row_no}: {e}")))?;
    }
    Ok(table)
}

/// Distinguishes externally computed tables from the synthetic stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreProviderKind {
    Imported,
    Synthetic,
}

/// Source of target pairs; both routes honor the same interface so training
/// and evaluation stay agnostic to where labels come from.
pub trait ScoreProvider {
    fn kind(&self) -> ScoreProviderKind;
    fn version(&self) -> &str;
    /// Target pair for a record heard through `pattern`. The record carries
    /// the audiogram id matching the pattern.
    fn score(&self, record: &UtteranceRecord, pattern: &HearingLossPattern) -> Result<TargetPair>;
}

/// Looks up pre-computed scores; the pattern argument is ignored because the
/// score was computed for the audiogram named in the record.
pub struct ImportedScores {
    pub table: ScoreTable,
}

impl ScoreProvider for ImportedScores {
    fn kind(&self) -> ScoreProviderKind {
        ScoreProviderKind::Imported
    }

    fn version(&self) -> &str {
        "imported-v1"
    }

    fn score(&self, record: &UtteranceRecord, _pattern: &HearingLossPattern) -> Result<TargetPair> {
        let key = ComboKey::new(&record.utterance_id, record.condition, &record.audiogram_id);
        self.table
            .get(&key)
            .ok_or_else(|| Error::KeyMismatch(vec![format!("no target for {key}")]))
    }
}

/// Deterministic synthetic provider keyed by a seed.
pub struct SyntheticScores {
    pub seed: u64,
}

impl ScoreProvider for SyntheticScores {
    fn kind(&self) -> ScoreProviderKind {
        ScoreProviderKind::Synthetic
    }

    fn version(&self) -> &str {
        "synthetic-v1"
    }

    fn score(&self, record: &UtteranceRecord, pattern: &HearingLossPattern) -> Result<TargetPair> {
        Ok(synthetic_targets(record, pattern, self.seed))
    }
}

/// Map a RIR id to a reproducible degradation strength in [0, 1).
///
/// The corpus generator derives each room's decay time from this same value,
/// so reverberation targets remain a learnable function of the audio.
pub fn rir_strength(rir_id: &str) -> f64 {
    let h = split_seed(0x7269_725f, rir_id);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Base degradation severity in [0, 1) from the record's signal metadata.
fn degradation(record: &UtteranceRecord) -> f64 {
    match record.condition {
        ConditionLabel::Noisy => 0.75 - 0.035 * record.snr_db.unwrap_or(0.0),
        ConditionLabel::Enhanced => 0.55 - 0.03 * record.snr_db.unwrap_or(0.0),
        ConditionLabel::Reverberation => {
            0.30 + 0.50 * rir_strength(record.rir_id.as_deref().unwrap_or(""))
        }
        ConditionLabel::Dereverberation => {
            0.15 + 0.35 * rir_strength(record.rir_id.as_deref().unwrap_or(""))
        }
        ConditionLabel::Vocoded => match record.vocoder_kind {
            Some(VocoderKind::Tone) => 0.55,
            _ => 0.65,
        },
    }
}

/// Deterministic proxy targets.
///
/// Quality falls roughly linearly with degradation and hearing loss and
/// spreads over [0.1, 0.9]; intelligibility is a saturating logistic of the
/// same drivers, concentrated in [0.6, 1.0]. Jitter is keyed by the seed and
/// the record only, never by the pattern, so for a fixed record both targets
/// are exactly monotone non-increasing in mean hearing loss.
pub fn synthetic_targets(
    record: &UtteranceRecord,
    pattern: &HearingLossPattern,
    seed: u64,
) -> TargetPair {
    let d = degradation(record);
    let loss_norm = pattern.values.iter().sum::<f64>() / 6.0 / 120.0;

    let mut rng = rng_for_key(
        seed,
        &format!("targets/{}/{}", record.utterance_id, record.condition),
    );
    let jitter_q = (rng.random::<f64>() - 0.5) * 0.01;
    let jitter_i = (rng.random::<f64>() - 0.5) * 0.12;

    let quality = (0.9 - 0.8 * (d + 0.6 * loss_norm).clamp(0.0, 1.0) + jitter_q).clamp(0.0, 1.0);
    let intelligibility = (0.55 + 0.44 * sigmoid(6.0 * (0.55 - d - 0.5 * loss_norm) + 1.2)
        + jitter_i)
        .clamp(0.0, 1.0);
    TargetPair {
        quality,
        intelligibility,
    }
}

/// Five-bin score distribution: [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8),
/// [0.8,1.0]; values are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    pub quality_percent: [f64; 5],
    pub intelligibility_percent: [f64; 5],
}

impl ScoreHistogram {
    pub const BIN_LABELS: [&'static str; 5] =
        ["0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0"];

    /// Render as CSV rows `metric,bin,percent`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,bin,percent\n");
        for (metric, bins) in [
            ("quality", &self.quality_percent),
            ("intelligibility", &self.intelligibility_percent),
        ] {
            for (label, pct) in Self::BIN_LABELS.iter().zip(bins.iter()) {
                out.push_str(&format!("{metric},{label},{pct:.4}\n"));
            }
        }
        out
    }
}

fn bin_of(score: f64) -> usize {
    // 1.0 belongs to the top bin, not a phantom sixth.
    ((score / 0.2).floor() as usize).min(4)
}

/// Bin both metrics of a table into the five-interval histogram.
pub fn score_histogram(table: &ScoreTable) -> Result<ScoreHistogram> {
    if table.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build a histogram from an empty score table".into(),
        ));
    }
    let mut q = [0usize; 5];
    let mut i = [0usize; 5];
    for (_, pair) in table.iter() {
        q[bin_of(pair.quality)] += 1;
        i[bin_of(pair.intelligibility)] += 1;
    }
    let n = table.len() as f64;
    let to_pct = |counts: [usize; 5]| counts.map(|c| 100.0 * c as f64 / n);
    Ok(ScoreHistogram {
        quality_percent: to_pct(q),
        intelligibility_percent: to_pct(i),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiogram::{make_pattern, Audiogram, AudiogramCategory, NORMAL_AUDIOGRAM_ID};

    fn record(condition: ConditionLabel) -> UtteranceRecord {
        let mut r = UtteranceRecord {
            utterance_id: "utt_000".into(),
            condition,
            audio_path: format!("audio/{condition}/utt_000.wav"),
            source_clean_path: "clean/utt_000.wav".into(),
            snr_db: None,
            rir_id: None,
            vocoder_kind: None,
            audiogram_id: NORMAL_AUDIOGRAM_ID.into(),
            quality_target: None,
            intelligibility_target: None,
        };
        match condition {
            ConditionLabel::Noisy | ConditionLabel::Enhanced => r.snr_db = Some(5.0),
            ConditionLabel::Reverberation | ConditionLabel::Dereverberation => {
                r.rir_id = Some("rir_0".into())
            }
            ConditionLabel::Vocoded => r.vocoder_kind = Some(VocoderKind::Tone),
        }
        r
    }

    fn normal_pattern() -> HearingLossPattern {
        make_pattern(&Audiogram::from_levels(
            NORMAL_AUDIOGRAM_ID,
            [0.0; 6],
            AudiogramCategory::Normal,
        ))
    }

    fn flat_pattern(level: f64) -> HearingLossPattern {
        make_pattern(&Audiogram::from_levels(
            "ag_flat_xx",
            [level; 6],
            AudiogramCategory::Flat,
        ))
    }

    #[test]
    fn synthetic_targets_are_deterministic_and_in_range() {
        for condition in ConditionLabel::ALL {
            let r = record(condition);
            let p = flat_pattern(45.0);
            let a = synthetic_targets(&r, &p, 7);
            let b = synthetic_targets(&r, &p, 7);
            assert_eq!(a, b);
            a.validate().unwrap();
            let c = synthetic_targets(&r, &p, 8);
            assert_ne!(a, c, "seed must matter for {condition}");
        }
    }

    #[test]
    fn high_snr_noisy_with_normal_hearing_is_highly_intelligible() {
        let mut r = record(ConditionLabel::Noisy);
        r.snr_db = Some(15.0);
        for seed in 0..20 {
            let t = synthetic_targets(&r, &normal_pattern(), seed);
            assert!(t.intelligibility >= 0.9, "seed {seed}: {t:?}");
        }
    }

    #[test]
    fn severe_loss_scores_strictly_below_normal_hearing() {
        for condition in ConditionLabel::ALL {
            for seed in 0..10 {
                let r = record(condition);
                let severe = synthetic_targets(&r, &flat_pattern(85.0), seed);
                let normal = synthetic_targets(&r, &normal_pattern(), seed);
                assert!(severe.quality < normal.quality, "{condition} seed {seed}");
                assert!(
                    severe.intelligibility < normal.intelligibility,
                    "{condition} seed {seed}"
                );
            }
        }
    }

    #[test]
    fn targets_are_monotone_in_mean_loss() {
        for condition in ConditionLabel::ALL {
            let r = record(condition);
            let mut last = synthetic_targets(&r, &flat_pattern(0.0), 3);
            for level in (5..=110).step_by(5) {
                let t = synthetic_targets(&r, &flat_pattern(level as f64), 3);
                assert!(t.quality <= last.quality, "{condition} level {level}");
                assert!(
                    t.intelligibility <= last.intelligibility,
                    "{condition} level {level}"
                );
                last = t;
            }
        }
    }

    #[test]
    fn rir_strength_is_stable_and_bounded() {
        let a = rir_strength("rir_0");
        assert_eq!(a, rir_strength("rir_0"));
        assert!((0.0..1.0).contains(&a));
        assert_ne!(a, rir_strength("rir_1"));
    }

    #[test]
    fn table_rejects_duplicates_and_out_of_range() {
        let mut table = ScoreTable::new();
        let key = ComboKey::new("u", ConditionLabel::Noisy, "ag_normal_00");
        let pair = TargetPair {
            quality: 0.5,
            intelligibility: 0.9,
        };
        table.insert(key.clone(), pair).unwrap();
        assert!(table.insert(key.clone(), pair).is_err());
        let bad = TargetPair {
            quality: 1.2,
            intelligibility: 0.9,
        };
        assert!(table
            .insert(ComboKey::new("v", ConditionLabel::Noisy, "ag"), bad)
            .is_err());
        assert_eq!(table.len(), 1);
        assert_eq!(table.get(&key), Some(pair));
    }

    #[test]
    fn coverage_check_lists_every_missing_key() {
        let mut table = ScoreTable::new();
        let present = ComboKey::new("u", ConditionLabel::Noisy, "a");
        table
            .insert(
                present.clone(),
                TargetPair {
                    quality: 0.5,
                    intelligibility: 0.5,
                },
            )
            .unwrap();
        let wanted = [
            present,
            ComboKey::new("v", ConditionLabel::Noisy, "a"),
            ComboKey::new("w", ConditionLabel::Vocoded, "a"),
        ];
        match table.check_coverage(wanted.iter()) {
            Err(Error::KeyMismatch(items)) => assert_eq!(items.len(), 2),
            other => panic!("expected key mismatch, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_preserves_entries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let mut table = ScoreTable::new();
        for (i, condition) in ConditionLabel::ALL.into_iter().enumerate() {
            table
                .insert(
                    ComboKey::new(&format!("utt_{i}"), condition, "ag_normal_00"),
                    TargetPair {
                        quality: 0.1 + 0.15 * i as f64,
                        intelligibility: 0.9 - 0.05 * i as f64,
                    },
                )
                .unwrap();
        }
        table.write_csv(&path).unwrap();
        let back = import_scores(&path).unwrap();
        assert_eq!(back.len(), table.len());
        for (key, pair) in table.iter() {
            let got = back.get(key).unwrap();
            assert!((got.quality - pair.quality).abs() < 1e-6);
            assert!((got.intelligibility - pair.intelligibility).abs() < 1e-6);
        }
    }

    #[test]
    fn import_rejects_bad_rows_with_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let header = "utterance_id,condition,audiogram_id,hasqi,haspi\n";

        let path = dir.path().join("range.csv");
        std::fs::write(&path, format!("{header}u,noisy,a,1.2,0.5\n")).unwrap();
        let err = import_scores(&path).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");

        let path = dir.path().join("dup.csv");
        std::fs::write(
            &path,
            format!("{header}u,noisy,a,0.5,0.5\nu,noisy,a,0.6,0.6\n"),
        )
        .unwrap();
        let err = import_scores(&path).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        let path = dir.path().join("cond.csv");
        std::fs::write(&path, format!("{header}u,garbled,a,0.5,0.5\n")).unwrap();
        assert!(import_scores(&path).is_err());

        let path = dir.path().join("empty.csv");
        std::fs::write(&path, header).unwrap();
        assert!(import_scores(&path).unwrap().is_empty());
    }

    #[test]
    fn histogram_bins_cover_everything_and_sum_to_100() {
        let mut table = ScoreTable::new();
        for (i, q) in [0.0, 0.19, 0.2, 0.55, 0.79, 0.8, 1.0].iter().enumerate() {
            table
                .insert(
                    ComboKey::new(&format!("u{i}"), ConditionLabel::Noisy, "a"),
                    TargetPair {
                        quality: *q,
                        intelligibility: 1.0,
                    },
                )
                .unwrap();
        }
        let h = score_histogram(&table).unwrap();
        assert!((h.quality_percent.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert!((h.intelligibility_percent.iter().sum::<f64>() - 100.0).abs() < 1e-9);
        assert_eq!(h.intelligibility_percent[4], 100.0);
        let q_counts: Vec<f64> = h
            .quality_percent
            .iter()
            .map(|p| p / 100.0 * 7.0)
            .collect();
        assert!((q_counts[0] - 2.0).abs() < 1e-9, "0.0 and 0.19");
        assert!((q_counts[4] - 2.0).abs() < 1e-9, "0.8 and 1.0");
        assert!(score_histogram(&ScoreTable::new()).is_err());

        let csv = h.to_csv();
        assert!(csv.starts_with("metric,bin,percent\n"));
        assert_eq!(csv.lines().count(), 11);
    }
}
