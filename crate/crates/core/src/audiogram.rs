//! Audiogram catalog: generation, shape classification, splits, and the
//! 6-dimensional hearing-loss pattern.
//!
//! The catalog holds 43 audiograms: 7 in each of 6 loss categories plus one
//! normal-hearing entry. Shapes follow parametric templates (5 dB quantized)
//! and the classifier mirrors those templates exactly, so classification
//! round-trips over everything we generate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_for_key;

/// Audiometric frequencies in Hz, ascending. All thresholds live on this grid.
pub const FREQUENCIES: [u32; 6] = [250, 500, 1000, 2000, 4000, 6000];

/// Catalog id of the unique normal-hearing audiogram.
pub const NORMAL_AUDIOGRAM_ID: &str = "ag_normal_00";

/// Hearing-loss shape category.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum AudiogramCategory {
    Flat,
    Sloping,
    Rising,
    CookieBite,
    NoiseNotched,
    HighFrequency,
    Normal,
}

impl AudiogramCategory {
    /// The six loss categories, excluding normal hearing.
    pub const LOSS_CATEGORIES: [AudiogramCategory; 6] = [
        AudiogramCategory::Flat,
        AudiogramCategory::Sloping,
        AudiogramCategory::Rising,
        AudiogramCategory::CookieBite,
        AudiogramCategory::NoiseNotched,
        AudiogramCategory::HighFrequency,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AudiogramCategory::Flat => "flat",
            AudiogramCategory::Sloping => "sloping",
            AudiogramCategory::Rising => "rising",
            AudiogramCategory::CookieBite => "cookie-bite",
            AudiogramCategory::NoiseNotched => "noise-notched",
            AudiogramCategory::HighFrequency => "high-frequency",
            AudiogramCategory::Normal => "normal",
        }
    }
}

impl fmt::Display for AudiogramCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AudiogramCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(AudiogramCategory::Flat),
            "sloping" => Ok(AudiogramCategory::Sloping),
            "rising" => Ok(AudiogramCategory::Rising),
            "cookie-bite" => Ok(AudiogramCategory::CookieBite),
            "noise-notched" => Ok(AudiogramCategory::NoiseNotched),
            "high-frequency" => Ok(AudiogramCategory::HighFrequency),
            "normal" => Ok(AudiogramCategory::Normal),
            other => Err(Error::MalformedCatalog(format!(
                "unknown category '{other}'"
            ))),
        }
    }
}

/// One listener's pure-tone thresholds with an assigned shape category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audiogram {
    pub id: String,
    /// Threshold in dB HL per audiometric frequency (Hz).
    pub thresholds: BTreeMap<u32, f64>,
    pub category: AudiogramCategory,
}

/// Thresholds in ascending-frequency order, the model-facing encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HearingLossPattern {
    pub values: [f64; 6],
}

impl Audiogram {
    /// Build an audiogram from thresholds in ascending-frequency order.
    pub fn from_levels(
        id: impl Into<String>,
        levels: [f64; 6],
        category: AudiogramCategory,
    ) -> Self {
        let thresholds = FREQUENCIES.iter().copied().zip(levels).collect();
        Audiogram {
            id: id.into(),
            thresholds,
            category,
        }
    }

    /// Thresholds as an ascending-frequency array.
    pub fn levels(&self) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (slot, f) in out.iter_mut().zip(FREQUENCIES) {
            *slot = self.thresholds[&f];
        }
        out
    }

    /// Check frequency coverage and threshold range.
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.len() != FREQUENCIES.len()
            || !FREQUENCIES.iter().all(|f| self.thresholds.contains_key(f))
        {
            return Err(Error::MalformedCatalog(format!(
                "audiogram {} must cover exactly {FREQUENCIES:?} Hz",
                self.id
            )));
        }
        for (&f, &t) in &self.thresholds {
            if !t.is_finite() || !(0.0..=120.0).contains(&t) {
                return Err(Error::MalformedCatalog(format!(
                    "audiogram {} has threshold {t} dB HL at {f} Hz outside [0, 120]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// Encode an audiogram as its 6-vector of thresholds, frequency ascending.
pub fn make_pattern(a: &Audiogram) -> HearingLossPattern {
    HearingLossPattern { values: a.levels() }
}

/// Assign a shape category from thresholds alone.
///
/// Rules are checked in a fixed priority order and mirror the generation
/// templates. Shapes matching none of the rules are an error, never a
/// default category.
pub fn classify_audiogram(a: &Audiogram) -> Result<AudiogramCategory> {
    a.validate()?;
    let t = a.levels();
    let max = t.iter().cloned().fold(f64::MIN, f64::max);
    let min = t.iter().cloned().fold(f64::MAX, f64::min);
    let mean = t.iter().sum::<f64>() / 6.0;

    // Normal hearing is all-zero thresholds; any loss above 20 dB HL at any
    // frequency already rules it out.
    if t.iter().all(|&v| v == 0.0) {
        return Ok(AudiogramCategory::Normal);
    }
    if max - min <= 15.0 && mean > 20.0 {
        return Ok(AudiogramCategory::Flat);
    }
    // Mid-frequency bulge: 1-2 kHz maximum at least 20 dB above every edge.
    let mid_max = t[2].max(t[3]);
    let edge_max = t[0].max(t[1]).max(t[4]).max(t[5]);
    if mid_max >= edge_max + 20.0 {
        return Ok(AudiogramCategory::CookieBite);
    }
    // Local maximum at 4 kHz at least 20 dB above both neighbors.
    if t[4] >= t[3] + 20.0 && t[4] >= t[5] + 20.0 {
        return Ok(AudiogramCategory::NoiseNotched);
    }
    if t[..4].iter().all(|&v| v <= 20.0) && t[4] >= 40.0 && t[5] >= 40.0 {
        return Ok(AudiogramCategory::HighFrequency);
    }
    let non_decreasing = t.windows(2).all(|w| w[0] <= w[1]);
    if non_decreasing && t[5] - t[0] >= 30.0 {
        return Ok(AudiogramCategory::Sloping);
    }
    let non_increasing = t.windows(2).all(|w| w[0] >= w[1]);
    if non_increasing && t[0] - t[5] >= 30.0 {
        return Ok(AudiogramCategory::Rising);
    }
    Err(Error::UnclassifiedAudiogram { id: a.id.clone() })
}

/// Draw a 5 dB-quantized value uniformly from `lo..=hi` (bounds inclusive,
/// both multiples of 5).
fn quantized(rng: &mut impl Rng, lo: i64, hi: i64) -> f64 {
    debug_assert!(lo % 5 == 0 && hi % 5 == 0 && lo <= hi);
    (lo + 5 * rng.random_range(0..=(hi - lo) / 5)) as f64
}

fn generate_levels(category: AudiogramCategory, rng: &mut impl Rng, index: usize) -> [f64; 6] {
    match category {
        AudiogramCategory::Normal => [0.0; 6],
        // Seven constant levels, 25..85 dB in 10 dB steps.
        AudiogramCategory::Flat => [(25 + 10 * index) as f64; 6],
        AudiogramCategory::Sloping => {
            // Start at 25-40 dB so the low frequencies never look
            // high-frequency-shaped, then climb by >= 30 dB overall.
            let start = quantized(rng, 25, 40);
            let mut levels = [start; 6];
            for i in 1..6 {
                levels[i] = levels[i - 1] + quantized(rng, 0, 15);
            }
            let rise = levels[5] - levels[0];
            if rise < 30.0 {
                levels[5] += 30.0 - rise;
            }
            levels
        }
        AudiogramCategory::Rising => {
            let end = quantized(rng, 25, 40);
            let mut levels = [end; 6];
            for i in (0..5).rev() {
                levels[i] = levels[i + 1] + quantized(rng, 0, 15);
            }
            let fall = levels[0] - levels[5];
            if fall < 30.0 {
                levels[0] += 30.0 - fall;
            }
            levels
        }
        AudiogramCategory::CookieBite => {
            let edges = [
                quantized(rng, 10, 25),
                quantized(rng, 10, 25),
                quantized(rng, 10, 25),
                quantized(rng, 10, 25),
            ];
            let edge_max = edges.iter().cloned().fold(f64::MIN, f64::max);
            let bulge = quantized(rng, 20, 35);
            let t1000 = edge_max + bulge;
            let t2000 = t1000 - quantized(rng, 0, 5);
            [edges[0], edges[1], t1000, t2000, edges[2], edges[3]]
        }
        AudiogramCategory::NoiseNotched => {
            let lows = [
                quantized(rng, 10, 30),
                quantized(rng, 10, 30),
                quantized(rng, 10, 30),
                quantized(rng, 10, 30),
            ];
            let t6000 = quantized(rng, 15, 35);
            let t4000 = lows[3].max(t6000) + quantized(rng, 20, 30);
            [lows[0], lows[1], lows[2], lows[3], t4000, t6000]
        }
        AudiogramCategory::HighFrequency => {
            let lows = [
                quantized(rng, 0, 20),
                quantized(rng, 0, 20),
                quantized(rng, 0, 20),
                quantized(rng, 0, 20),
            ];
            let t4000 = quantized(rng, 50, 70);
            // Keep 6 kHz within 10 dB of 4 kHz so the shape never reads as a
            // 4 kHz notch, and never below the 40 dB high-frequency floor.
            let t6000 = t4000 + quantized(rng, -10, 10);
            [lows[0], lows[1], lows[2], lows[3], t4000, t6000]
        }
    }
}

/// Generate the full 43-audiogram catalog: 7 per loss category plus normal.
pub fn generate_catalog(seed: u64) -> Vec<Audiogram> {
    let mut catalog = Vec::with_capacity(43);
    for category in AudiogramCategory::LOSS_CATEGORIES {
        for index in 0..7 {
            let id = format!("ag_{}_{index:02}", category.as_str().replace('-', "_"));
            let mut rng = rng_for_key(seed, &format!("audiogram/{category}/{index}"));
            let levels = generate_levels(category, &mut rng, index);
            catalog.push(Audiogram::from_levels(id, levels, category));
        }
    }
    catalog.push(Audiogram::from_levels(
        NORMAL_AUDIOGRAM_ID,
        [0.0; 6],
        AudiogramCategory::Normal,
    ));
    catalog
}

/// Train / validation / test assignment over the catalog.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AudiogramSplit {
    pub train: Vec<Audiogram>,
    pub validation: Vec<Audiogram>,
    pub test: Vec<Audiogram>,
}

impl AudiogramSplit {
    fn ids(set: &[Audiogram]) -> Vec<&str> {
        set.iter().map(|a| a.id.as_str()).collect()
    }

    /// Check the size, overlap, and per-category count invariants.
    pub fn validate(&self) -> Result<()> {
        if self.train.len() != 31 || self.validation.len() != 13 || self.test.len() != 13 {
            return Err(Error::InvalidInput(format!(
                "split sizes must be (31, 13, 13), got ({}, {}, {})",
                self.train.len(),
                self.validation.len(),
                self.test.len()
            )));
        }
        let train_ids = Self::ids(&self.train);
        for a in &self.validation {
            if !train_ids.contains(&a.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "validation audiogram {} is not in the training set",
                    a.id
                )));
            }
        }
        for a in &self.test {
            if a.category != AudiogramCategory::Normal && train_ids.contains(&a.id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "test audiogram {} overlaps the training set",
                    a.id
                )));
            }
        }
        for set in [&self.train, &self.validation, &self.test] {
            if !set.iter().any(|a| a.category == AudiogramCategory::Normal) {
                return Err(Error::InvalidInput(
                    "normal-hearing audiogram must appear in every split".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Split the catalog into 31 train, 13 validation, and 13 test audiograms.
///
/// Per loss category: 5 train, 2 validation (drawn from the train five), and
/// 2 test. The normal-hearing audiogram joins all three sets.
pub fn split_catalog(catalog: &[Audiogram], seed: u64) -> Result<AudiogramSplit> {
    let mut by_category: BTreeMap<AudiogramCategory, Vec<&Audiogram>> = BTreeMap::new();
    for a in catalog {
        a.validate()?;
        by_category.entry(a.category).or_default().push(a);
    }
    for category in AudiogramCategory::LOSS_CATEGORIES {
        let n = by_category.get(&category).map_or(0, Vec::len);
        if n != 7 {
            return Err(Error::MalformedCatalog(format!(
                "expected 7 {category} audiograms, found {n}"
            )));
        }
    }
    let normal = by_category
        .get(&AudiogramCategory::Normal)
        .filter(|v| v.len() == 1)
        .map(|v| v[0])
        .ok_or_else(|| {
            Error::MalformedCatalog("expected exactly 1 normal-hearing audiogram".into())
        })?;

    let mut split = AudiogramSplit {
        train: vec![normal.clone()],
        validation: vec![normal.clone()],
        test: vec![normal.clone()],
    };
    for category in AudiogramCategory::LOSS_CATEGORIES {
        let mut members = by_category[&category].clone();
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = rng_for_key(seed, &format!("split/{category}"));
        // Fisher-Yates over the 7 members of this category.
        for i in (1..members.len()).rev() {
            members.swap(i, rng.random_range(0..=i));
        }
        for a in &members[..5] {
            split.train.push((*a).clone());
        }
        for a in &members[..2] {
            split.validation.push((*a).clone());
        }
        for a in &members[5..7] {
            split.test.push((*a).clone());
        }
    }
    split.validate()?;
    Ok(split)
}

/// Write the catalog as CSV: `id,category,t250,t500,t1000,t2000,t4000,t6000`.
pub fn write_catalog_csv<W: Write>(catalog: &[Audiogram], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "id", "category", "t250", "t500", "t1000", "t2000", "t4000", "t6000",
    ])?;
    for a in catalog {
        a.validate()?;
        let levels = a.levels();
        let mut record = vec![a.id.clone(), a.category.to_string()];
        record.extend(levels.iter().map(|t| format!("{}", *t as i64)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a catalog CSV, validating ranges and that each row's stated category
/// matches its classified shape.
pub fn read_catalog_csv<R: Read>(reader: R) -> Result<Vec<Audiogram>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut catalog = Vec::new();
    let mut seen = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        if row.len() != 8 {
            return Err(Error::MalformedCatalog(format!(
                "expected 8 fields per record, got {}",
                row.len()
            )));
        }
        let id = row[0].to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(Error::MalformedCatalog(format!("duplicate id '{id}'")));
        }
        let category: AudiogramCategory = row[1].parse()?;
        let mut levels = [0.0; 6];
        for (slot, field) in levels.iter_mut().zip(row.iter().skip(2)) {
            *slot = field.trim().parse::<i64>().map_err(|_| {
                Error::MalformedCatalog(format!("non-integer threshold '{field}' in '{id}'"))
            })? as f64;
        }
        let a = Audiogram::from_levels(id, levels, category);
        let classified = classify_audiogram(&a)?;
        if classified != a.category {
            return Err(Error::MalformedCatalog(format!(
                "audiogram {} labeled {} but its shape classifies as {classified}",
                a.id, a.category
            )));
        }
        catalog.push(a);
    }
    Ok(catalog)
}

/// Map from audiogram id to category, for report grouping.
pub fn category_index(catalog: &[Audiogram]) -> BTreeMap<String, AudiogramCategory> {
    catalog
        .iter()
        .map(|a| (a.id.clone(), a.category))
        .collect()
}
