//! Log-magnitude spectrogram baseline features.

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::signal::Waveform;

/// Additive floor inside the log, so silence maps to a finite constant.
const LOG_FLOOR: f64 = 1e-10;

pub const SPECTROGRAM_PROVIDER_ID: &str = "spectrogram";

/// Log-magnitude STFT with a Hann window.
///
/// Frame and hop are given in milliseconds; the transform size is the frame
/// length rounded up to a power of two (512 for 32 ms at 16 kHz), giving
/// D = fft/2 + 1 bins and T = floor((N - frame) / hop) + 1 frames.
pub fn spectrogram(x: &Waveform, frame_ms: f64, hop_ms: f64) -> Result<FeatureSequence> {
    if !(hop_ms > 0.0) || frame_ms < hop_ms {
        return Err(Error::InvalidInput(format!(
            "need frame_ms >= hop_ms > 0, got frame {frame_ms} hop {hop_ms}"
        )));
    }
    let fs = x.sample_rate as f64;
    let frame = (frame_ms / 1_000.0 * fs).round() as usize;
    let hop = (hop_ms / 1_000.0 * fs).round() as usize;
    if frame == 0 || hop == 0 {
        return Err(Error::InvalidInput(
            "frame and hop must span at least one sample".into(),
        ));
    }
    let n = x.samples.len();
    if n < frame {
        return Err(Error::InvalidInput(format!(
            "utterance of {n} samples is shorter than one {frame}-sample frame"
        )));
    }
    let fft_size = frame.next_power_of_two();
    let n_bins = fft_size / 2 + 1;
    let n_frames = (n - frame) / hop + 1;

    let window: Vec<f64> = (0..frame)
        .map(|i| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / frame as f64).cos()
        })
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(fft_size);

    let mut frames = Array2::zeros((n_frames, n_bins));
    let mut buffer = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..n_frames {
        let start = t * hop;
        for (i, slot) in buffer.iter_mut().enumerate() {
            let v = if i < frame {
                x.samples[start + i] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        fft.process(&mut buffer);
        for (b, value) in buffer.iter().take(n_bins).enumerate() {
            frames[[t, b]] = (value.norm() + LOG_FLOOR).ln();
        }
    }

    Ok(FeatureSequence {
        frames,
        frame_hop_seconds: hop as f64 / fs,
        provider_id: SPECTROGRAM_PROVIDER_ID.into(),
    })
}
