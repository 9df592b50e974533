//! Core waveform arithmetic: SNR mixing, convolutional reverb, and SPL
//! leveling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::signal::{RoomImpulseResponse, Waveform};

/// Calibration constant: digital rms 1.0 corresponds to 100 dB SPL.
pub const REF_DB_SPL: f64 = 100.0;

/// Root-mean-square amplitude.
pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Cut or tile `noise` into a segment of exactly `target_len` samples,
/// choosing the crop offset from `rng` so reruns with the same stream are
/// identical.
pub fn prepare_noise_segment(
    noise: &Waveform,
    target_len: usize,
    rng: &mut impl Rng,
) -> Result<Waveform> {
    if target_len == 0 {
        return Err(Error::InvalidInput("target length must be positive".into()));
    }
    let mut pool = noise.samples.clone();
    while pool.len() < target_len {
        pool.extend_from_slice(&noise.samples);
    }
    let offset = rng.random_range(0..=pool.len() - target_len);
    Waveform::new(
        pool[offset..offset + target_len].to_vec(),
        noise.sample_rate,
    )
}

/// Mix noise into clean speech at the requested SNR.
///
/// The gain is alpha = rms(clean) / (rms(noise) * 10^(snr_db/20)) on the
/// noise segment cropped to the clean length; the realized SNR therefore
/// matches the request up to floating-point error.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate,
            right: noise.sample_rate,
        });
    }
    if noise.len() < clean.len() {
        return Err(Error::InvalidInput(format!(
            "noise ({} samples) shorter than clean ({}); prepare a segment first",
            noise.len(),
            clean.len()
        )));
    }
    let segment = &noise.samples[..clean.len()];
    let clean_rms = rms(&clean.samples);
    if clean_rms == 0.0 {
        return Err(Error::SilentSignal {
            context: "mix_at_snr clean input",
        });
    }
    let noise_rms = rms(segment);
    if noise_rms == 0.0 {
        return Err(Error::SilentSignal {
            context: "mix_at_snr noise input",
        });
    }
    let alpha = clean_rms / (noise_rms * 10f64.powf(snr_db / 20.0));
    let mixed = clean
        .samples
        .iter()
        .zip(segment)
        .map(|(c, n)| c + alpha * n)
        .collect();
    Waveform::new(mixed, clean.sample_rate)
}

/// SNR of `mixture` against the known clean component, in dB.
pub fn measure_snr_db(clean: &Waveform, mixture: &Waveform) -> Result<f64> {
    if clean.len() != mixture.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: clean {} vs mixture {}",
            clean.len(),
            mixture.len()
        )));
    }
    let residual: Vec<f64> = mixture
        .samples
        .iter()
        .zip(&clean.samples)
        .map(|(m, c)| m - c)
        .collect();
    let clean_rms = rms(&clean.samples);
    let noise_rms = rms(&residual);
    if clean_rms == 0.0 || noise_rms == 0.0 {
        return Err(Error::SilentSignal {
            context: "measure_snr_db",
        });
    }
    Ok(20.0 * (clean_rms / noise_rms).log10())
}

/// Convolve clean speech with a scaled room impulse response.
///
/// Full convolution truncated to the clean length; peak-normalized only when
/// the peak exceeds 1, so identity kernels pass the signal through exactly.
/// Taps are accumulated in ascending order, which a brute-force oracle can
/// reproduce bit-for-bit.
pub fn apply_reverb(clean: &Waveform, rir: &RoomImpulseResponse) -> Result<Waveform> {
    if clean.sample_rate != rir.sample_rate {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate,
            right: rir.sample_rate,
        });
    }
    rir.validate()?;
    let kernel: Vec<f64> = rir.samples.iter().map(|s| s * rir.scale_factor).collect();
    let n = clean.len();
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &tap) in kernel.iter().enumerate().take(i + 1) {
            acc += tap * clean.samples[i - k];
        }
        *slot = acc;
    }
    let peak = out.iter().fold(0.0f64, |p, s| p.max(s.abs()));
    if peak > 1.0 {
        for s in &mut out {
            *s /= peak;
        }
    }
    Waveform::new(out, clean.sample_rate)
}

/// Scale the waveform so its rms realizes the target presentation level,
/// with digital rms 1.0 calibrated to `REF_DB_SPL`.
///
/// Samples are not clamped here; f64 processing has headroom, and clamping
/// would break the exact-rms contract. The WAV writer clips at the disk
/// boundary instead.
pub fn set_level(x: &Waveform, target_db_spl: f64) -> Result<Waveform> {
    let current = rms(&x.samples);
    if current == 0.0 {
        return Err(Error::SilentSignal {
            context: "set_level",
        });
    }
    let target_rms = 10f64.powf((target_db_spl - REF_DB_SPL) / 20.0);
    let gain = target_rms / current;
    let samples = x.samples.iter().map(|s| s * gain).collect();
    Waveform::new(samples, x.sample_rate)
}
