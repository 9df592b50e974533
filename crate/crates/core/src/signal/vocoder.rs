//! Channel vocoder with tone or noise carriers, in the style of cochlear
//! implant simulations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_for_key;
use crate::signal::dsp::rms;
use crate::signal::filt::{analytic_envelope, bandpass4, butter4_lowpass, filter_cascade};
use crate::signal::{VocoderKind, Waveform};

/// Analysis band range, log-spaced.
const BAND_LO_HZ: f64 = 80.0;
const BAND_HI_HZ: f64 = 7_600.0;
/// Envelope smoothing cutoff.
const ENVELOPE_CUTOFF_HZ: f64 = 160.0;
/// Narrowest admissible analysis band.
const MIN_BAND_WIDTH_HZ: f64 = 10.0;

/// Resynthesize speech from band envelopes modulating tone or noise carriers.
///
/// The input is mean-removed before analysis, so the output is exactly
/// invariant to any DC offset on the input. Output rms is matched to the
/// (mean-removed) input rms.
pub fn vocode(
    clean: &Waveform,
    kind: VocoderKind,
    n_channels: usize,
    seed: u64,
) -> Result<Waveform> {
    if clean.sample_rate < 16_000 {
        return Err(Error::InvalidInput(format!(
            "vocoder needs at least 16 kHz input, got {} Hz",
            clean.sample_rate
        )));
    }
    if n_channels < 2 {
        return Err(Error::InvalidInput(
            "vocoder needs at least 2 channels".into(),
        ));
    }
    let fs = clean.sample_rate as f64;
    let edges = band_edges(n_channels);
    if edges.windows(2).any(|w| w[1] - w[0] < MIN_BAND_WIDTH_HZ) {
        return Err(Error::InvalidInput(format!(
            "{n_channels} channels make bands narrower than {MIN_BAND_WIDTH_HZ} Hz"
        )));
    }
    if *edges.last().unwrap() >= fs / 2.0 {
        return Err(Error::InvalidInput(format!(
            "band edge {:.0} Hz exceeds Nyquist for {} Hz input",
            edges.last().unwrap(),
            clean.sample_rate
        )));
    }

    let mean = clean.samples.iter().sum::<f64>() / clean.len() as f64;
    let centered: Vec<f64> = clean.samples.iter().map(|s| s - mean).collect();
    let input_rms = rms(&centered);
    if input_rms == 0.0 {
        return Err(Error::SilentSignal {
            context: "vocode input",
        });
    }

    let n = centered.len();
    let mut out = vec![0.0; n];
    for ch in 0..n_channels {
        let (lo, hi) = (edges[ch], edges[ch + 1]);
        let band = filter_cascade(&bandpass4(lo, hi, fs), &centered);
        let mut envelope = analytic_envelope(&band);
        envelope = filter_cascade(&butter4_lowpass(ENVELOPE_CUTOFF_HZ, fs), &envelope);

        let carrier = match kind {
            VocoderKind::Tone => {
                let fc = (lo * hi).sqrt();
                (0..n)
                    .map(|i| (2.0 * std::f64::consts::PI * fc * i as f64 / fs).sin())
                    .collect::<Vec<f64>>()
            }
            VocoderKind::Noise => {
                let mut rng = rng_for_key(seed, &format!("vocoder-noise/{ch}"));
                let white: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                filter_cascade(&bandpass4(lo, hi, fs), &white)
            }
        };
        for ((slot, env), car) in out.iter_mut().zip(&envelope).zip(&carrier) {
            *slot += env * car;
        }
    }

    let out_rms = rms(&out);
    if out_rms == 0.0 {
        return Err(Error::SilentSignal {
            context: "vocode output",
        });
    }
    let gain = input_rms / out_rms;
    for s in &mut out {
        *s *= gain;
    }
    Waveform::new(out, clean.sample_rate)
}

/// Log-spaced band edges over [BAND_LO_HZ, BAND_HI_HZ], n_channels + 1 values.
fn band_edges(n_channels: usize) -> Vec<f64> {
    let ratio = BAND_HI_HZ / BAND_LO_HZ;
    (0..=n_channels)
        .map(|i| BAND_LO_HZ * ratio.powf(i as f64 / n_channels as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    fn sine(freq: f64, fs: u32, seconds: f64) -> Waveform {
        let n = (fs as f64 * seconds) as usize;
        let samples = (0..n)
            .map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / fs as f64).sin())
            .collect();
        Waveform::new(samples, fs).unwrap()
    }

    fn spectral_peak_hz(wav: &Waveform) -> f64 {
        let n = wav.len();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> =
            wav.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
        fft.process(&mut buf);
        let (k, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        k as f64 * wav.sample_rate as f64 / n as f64
    }

    #[test]
    fn output_rms_matches_input() {
        let clean = sine(440.0, 16_000, 1.0);
        for kind in [VocoderKind::Tone, VocoderKind::Noise] {
            let out = vocode(&clean, kind, 8, 7).unwrap();
            let ratio = rms(&out.samples) / rms(&clean.samples);
            assert!((ratio - 1.0).abs() < 0.01, "{kind}: ratio {ratio}");
            assert_eq!(out.len(), clean.len());
        }
    }

    #[test]
    fn tone_vocoded_sine_peaks_inside_its_band() {
        let clean = sine(1_000.0, 16_000, 1.0);
        let out = vocode(&clean, VocoderKind::Tone, 8, 0).unwrap();
        let peak = spectral_peak_hz(&out);
        let edges = band_edges(8);
        let band = edges.windows(2).find(|w| w[0] <= 1_000.0 && 1_000.0 < w[1]);
        let band = band.expect("1 kHz lies inside the analysis range");
        assert!(
            band[0] <= peak && peak <= band[1],
            "peak {peak} Hz outside band [{}, {}]",
            band[0],
            band[1]
        );
    }

    #[test]
    fn dc_offset_does_not_change_output() {
        // Mean removal happens before analysis, so a DC shift only perturbs
        // the result through the rounding of (x + c) - mean(x + c).
        let clean = sine(500.0, 16_000, 0.5);
        let shifted = Waveform::new(
            clean.samples.iter().map(|s| s + 0.2).collect(),
            clean.sample_rate,
        )
        .unwrap();
        let a = vocode(&clean, VocoderKind::Tone, 8, 3).unwrap();
        let b = vocode(&shifted, VocoderKind::Tone, 8, 3).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn vocode_is_deterministic_per_seed() {
        let clean = sine(700.0, 16_000, 0.3);
        let a = vocode(&clean, VocoderKind::Noise, 8, 11).unwrap();
        let b = vocode(&clean, VocoderKind::Noise, 8, 11).unwrap();
        assert_eq!(a.samples, b.samples);
        let c = vocode(&clean, VocoderKind::Noise, 8, 12).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn rejects_bad_configurations() {
        let clean = sine(440.0, 16_000, 0.2);
        assert!(vocode(&clean, VocoderKind::Tone, 1, 0).is_err());
        assert!(vocode(&clean, VocoderKind::Tone, 64, 0).is_err());
        let low_rate = Waveform::new(vec![0.1; 4000], 8_000).unwrap();
        assert!(vocode(&low_rate, VocoderKind::Tone, 8, 0).is_err());
    }

    #[test]
    fn rejects_silent_input() {
        let silent = Waveform::new(vec![0.25; 8000], 16_000).unwrap();
        // Constant input is pure DC: mean removal leaves silence.
        assert!(matches!(
            vocode(&silent, VocoderKind::Tone, 8, 0),
            Err(Error::SilentSignal { .. })
        ));
    }
}
