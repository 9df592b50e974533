//! NAL-R linear prescriptive amplification: per-frequency insertion gains
//! from an audiogram, realized as a linear-phase FIR filter.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audiogram::{HearingLossPattern, FREQUENCIES};
use crate::error::Result;
use crate::signal::Waveform;

/// Per-frequency additive constants of the prescription.
const K_DB: [f64; 6] = [-17.0, -8.0, 1.0, -1.0, -2.0, -2.0];
/// FIR length (odd, so the group delay is an integer number of samples).
const FIR_TAPS: usize = 511;
/// Design grid size.
const DESIGN_FFT: usize = 2048;

/// Prescribed insertion gain in dB at the six audiometric frequencies.
///
/// gain_i = max(0, X + 0.31 * H_i + k_i) with X = 0.05 * (H500 + H1000 + H2000).
/// A normal-hearing pattern (no measurable loss anywhere) receives no
/// fitting at all, so its gains are zero rather than the formula's +1 dB
/// residue at 1 kHz.
pub fn nalr_gains(p: &HearingLossPattern) -> [f64; 6] {
    if p.values.iter().all(|&h| h == 0.0) {
        return [0.0; 6];
    }
    let x = 0.05 * (p.values[1] + p.values[2] + p.values[3]);
    let mut gains = [0.0; 6];
    for i in 0..6 {
        gains[i] = (x + 0.31 * p.values[i] + K_DB[i]).max(0.0);
    }
    gains
}

/// Desired gain in dB at an arbitrary frequency: log-linear interpolation
/// between the six anchors, constant extension outside them.
fn gain_db_at(freq: f64, gains: &[f64; 6]) -> f64 {
    let anchors = FREQUENCIES.map(|f| f as f64);
    if freq <= anchors[0] {
        return gains[0];
    }
    if freq >= anchors[5] {
        return gains[5];
    }
    for i in 0..5 {
        if freq <= anchors[i + 1] {
            let t = (freq.ln() - anchors[i].ln()) / (anchors[i + 1].ln() - anchors[i].ln());
            return gains[i] + t * (gains[i + 1] - gains[i]);
        }
    }
    gains[5]
}

/// Zero-phase FIR design by frequency sampling plus a Hamming window.
fn design_fir(gains: &[f64; 6], sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let n = DESIGN_FFT;
    let mut spectrum = vec![Complex::new(0.0, 0.0); n];
    for (k, slot) in spectrum.iter_mut().enumerate().take(n / 2 + 1) {
        let freq = k as f64 * fs / n as f64;
        let mag = 10f64.powf(gain_db_at(freq, gains) / 20.0);
        *slot = Complex::new(mag, 0.0);
    }
    for k in 1..n / 2 {
        spectrum[n - k] = spectrum[k];
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(n).process(&mut spectrum);

    // Center the impulse response and window it down to FIR_TAPS.
    let half = FIR_TAPS / 2;
    let mut taps = Vec::with_capacity(FIR_TAPS);
    for i in 0..FIR_TAPS {
        let idx = (n + i - half) % n;
        let w = 0.54
            - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (FIR_TAPS - 1) as f64).cos();
        taps.push(spectrum[idx].re / n as f64 * w);
    }
    taps
}

/// Amplify a waveform by the NAL-R prescription for the given pattern.
///
/// Linear-phase filtering with the group delay compensated, so the output is
/// time-aligned with (and the same length as) the input. A normal-hearing
/// pattern prescribes 0 dB everywhere and passes the signal through.
pub fn apply_nalr(x: &Waveform, p: &HearingLossPattern) -> Result<Waveform> {
    let gains = nalr_gains(p);
    let taps = design_fir(&gains, x.sample_rate);
    let half = FIR_TAPS / 2;
    let n = x.len();
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        // y[i] = sum_k taps[k] * x[i + half - k], the delay-compensated form.
        let mut acc = 0.0;
        for (k, &tap) in taps.iter().enumerate() {
            let j = i + half;
            if j >= k && j - k < n {
                acc += tap * x.samples[j - k];
            }
        }
        *slot = acc;
    }
    Waveform::new(out, x.sample_rate)
}
