//! Synthetic source pools: speech-like clean utterances, noise beds, and
//! room impulse responses, written as WAV pools the manifest builder can
//! consume. Everything is generated on the desk, so the full corpus runs
//! end-to-end without external recordings.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for_key;
use crate::signal::manifest::{CleanAsset, NoiseAsset, RirAsset};
use crate::signal::wav::write_wav;
use crate::signal::Waveform;
use crate::targets::rir_strength;

/// Sizes and identity of a synthetic source-pool build.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub n_clean: usize,
    pub n_noise: usize,
    pub n_rirs: usize,
    pub sample_rate: u32,
    /// Duration of each clean utterance, seconds.
    pub clean_seconds: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            n_clean: 40,
            n_noise: 6,
            n_rirs: 8,
            sample_rate: 16_000,
            clean_seconds: 1.0,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_clean == 0 || self.n_noise == 0 || self.n_rirs == 0 {
            return Err(Error::InvalidInput(format!(
                "source pools must be non-empty: {} clean, {} noise, {} rirs",
                self.n_clean, self.n_noise, self.n_rirs
            )));
        }
        // The vocoded condition needs the full analysis bandwidth.
        if self.sample_rate < 16_000 {
            return Err(Error::InvalidInput(format!(
                "sample rate {} below the 16 kHz pipeline minimum",
                self.sample_rate
            )));
        }
        if !(self.clean_seconds >= 0.2) {
            return Err(Error::InvalidInput(format!(
                "clean utterances of {} s are too short to frame",
                self.clean_seconds
            )));
        }
        Ok(())
    }
}

/// Relative-path asset lists for a generated pool, rooted where
/// [`synthesize_source_pools`] wrote them.
#[derive(Debug, Clone)]
pub struct CorpusPools {
    pub clean: Vec<CleanAsset>,
    pub noise: Vec<NoiseAsset>,
    pub rirs: Vec<RirAsset>,
}

/// A speech-like utterance: a harmonic source on a drifting pitch track,
/// shaped by syllable-rate amplitude bumps and a little breath noise.
fn clean_utterance(utterance_id: &str, spec: &CorpusSpec) -> Waveform {
    let mut rng = rng_for_key(spec.seed, &format!("corpus/clean/{utterance_id}"));
    let fs = spec.sample_rate as f64;
    let n = (spec.clean_seconds * fs).round() as usize;

    let f0_base = rng.random_range(95.0..220.0);
    let f0_drift = rng.random_range(-25.0..25.0);
    let vibrato_hz = rng.random_range(4.0..7.0);
    let vibrato_depth = rng.random_range(1.0..4.0);
    let syllable_hz = rng.random_range(2.5..5.0);
    let syllable_phase = rng.random_range(0.0..2.0 * PI);
    let tilt = rng.random_range(0.8..1.6);
    let harmonic_phases: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut samples = Vec::with_capacity(n);
    let mut phase = 0.0f64;
    for i in 0..n {
        let t = i as f64 / fs;
        let f0 = f0_base
            + f0_drift * t / spec.clean_seconds
            + vibrato_depth * (2.0 * PI * vibrato_hz * t).sin();
        phase += 2.0 * PI * f0 / fs;

        let mut voiced = 0.0;
        for (k, phi) in harmonic_phases.iter().enumerate() {
            let order = (k + 1) as f64;
            voiced += (phase * order + phi).sin() / order.powf(tilt);
        }
        // Syllable-rate envelope: half-rectified cosine bumps with gaps.
        let envelope = (2.0 * PI * syllable_hz * t + syllable_phase).cos().max(0.0);
        let breath = rng.random_range(-1.0..1.0) * 0.02;
        samples.push(voiced * envelope + breath);
    }

    let peak = samples.iter().fold(0.0f64, |p, s| p.max(s.abs())).max(1e-9);
    for s in &mut samples {
        *s *= 0.5 / peak;
    }
    Waveform {
        samples,
        sample_rate: spec.sample_rate,
    }
}

/// A noise bed roughly three utterances long. Flavors rotate through white,
/// lowpassed, mains hum, and babble-like modulated noise.
fn noise_bed(noise_id: &str, flavor: usize, spec: &CorpusSpec) -> Waveform {
    let mut rng = rng_for_key(spec.seed, &format!("corpus/noise/{noise_id}"));
    let fs = spec.sample_rate as f64;
    let n = ((spec.clean_seconds * 3.0).max(2.0) * fs).round() as usize;

    let mut samples = Vec::with_capacity(n);
    let mut lp = 0.0f64;
    for i in 0..n {
        let t = i as f64 / fs;
        let white: f64 = rng.random_range(-1.0..1.0);
        let v = match flavor % 4 {
            0 => white,
            1 => {
                // One-pole lowpass pushes the energy toward low frequencies.
                lp = 0.97 * lp + 0.25 * white;
                lp * 4.0
            }
            2 => {
                let hum = (2.0 * PI * 50.0 * t).sin() + 0.4 * (2.0 * PI * 150.0 * t).sin();
                0.7 * hum + 0.3 * white
            }
            _ => {
                // Babble-like: lowpassed noise with syllable-rate modulation.
                lp = 0.9 * lp + 0.4 * white;
                let modulation = 0.55 + 0.45 * (2.0 * PI * 4.0 * t).sin();
                lp * 2.0 * modulation
            }
        };
        samples.push(v);
    }

    let r = crate::signal::dsp::rms(&samples).max(1e-9);
    for s in &mut samples {
        *s *= 0.1 / r;
    }
    let peak = samples.iter().fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > 1.0 {
        for s in &mut samples {
            *s /= peak;
        }
    }
    Waveform {
        samples,
        sample_rate: spec.sample_rate,
    }
}

/// Decay time of a synthetic room, seconds. Derived from the same per-id
/// strength that drives reverberation target scores, so the audio and its
/// labels stay consistent.
pub fn rir_decay_seconds(rir_id: &str) -> f64 {
    0.15 + 0.55 * rir_strength(rir_id)
}

/// An exponentially decaying noise tail behind a unit direct path.
fn rir_kernel(rir_id: &str, spec: &CorpusSpec) -> Waveform {
    let mut rng = rng_for_key(spec.seed, &format!("corpus/rir/{rir_id}"));
    let fs = spec.sample_rate as f64;
    let t60 = rir_decay_seconds(rir_id);
    // Amplitude decays by 60 dB (1e-3) over t60.
    let tau = t60 / (3.0 * std::f64::consts::LN_10);
    let n = ((t60 * 1.1) * fs).round() as usize;

    let mut samples = vec![0.0; n.max(8)];
    samples[0] = 1.0;
    for (i, s) in samples.iter_mut().enumerate().skip(1) {
        let t = i as f64 / fs;
        *s = rng.random_range(-1.0..1.0) * 0.35 * (-t / tau).exp();
    }
    Waveform {
        samples,
        sample_rate: spec.sample_rate,
    }
}

/// Generate the clean, noise, and RIR pools under `root`, returning asset
/// lists with paths relative to `root`.
///
/// Layout: `clean/utt_00000.wav`, `noise/noise_00.wav`, `rirs/rir_00.wav`
/// with a `rirs/rirs.csv` sidecar (`rir_id,scale_factor`; the factor
/// normalizes the kernel to unit energy). Byte-identical across reruns with
/// the same spec.
pub fn synthesize_source_pools(root: &Path, spec: &CorpusSpec) -> Result<CorpusPools> {
    spec.validate()?;

    let mut clean = Vec::with_capacity(spec.n_clean);
    for i in 0..spec.n_clean {
        let utterance_id = format!("utt_{i:05}");
        let path = format!("clean/{utterance_id}.wav");
        write_wav(&root.join(&path), &clean_utterance(&utterance_id, spec))?;
        clean.push(CleanAsset { utterance_id, path });
    }

    let mut noise = Vec::with_capacity(spec.n_noise);
    for i in 0..spec.n_noise {
        let noise_id = format!("noise_{i:02}");
        let path = format!("noise/{noise_id}.wav");
        write_wav(&root.join(&path), &noise_bed(&noise_id, i, spec))?;
        noise.push(NoiseAsset { noise_id, path });
    }

    let mut rirs = Vec::with_capacity(spec.n_rirs);
    let mut csv_rows = String::from("rir_id,scale_factor\n");
    for i in 0..spec.n_rirs {
        let rir_id = format!("rir_{i:02}");
        let path = format!("rirs/{rir_id}.wav");
        let kernel = rir_kernel(&rir_id, spec);
        let energy: f64 = kernel.samples.iter().map(|s| s * s).sum();
        let scale_factor = 1.0 / energy.sqrt();
        write_wav(&root.join(&path), &kernel)?;
        csv_rows.push_str(&format!("{rir_id},{scale_factor}\n"));
        rirs.push(RirAsset {
            rir_id,
            path,
            scale_factor,
        });
    }
    fs::write(root.join("rirs").join("rirs.csv"), csv_rows)?;

    Ok(CorpusPools { clean, noise, rirs })
}
