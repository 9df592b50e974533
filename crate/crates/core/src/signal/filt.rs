//! Internal filter primitives: biquad cascades with Butterworth tunings and
//! an FFT-based analytic-signal envelope.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Direct Form II transposed biquad section.
#[derive(Debug, Clone)]
pub(crate) struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl Biquad {
    fn from_coeffs(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Biquad {
            b0: b0 / a0,
            b1: b1 / a0,
            b2: b2 / a0,
            a1: a1 / a0,
            a2: a2 / a0,
            s1: 0.0,
            s2: 0.0,
        }
    }

    pub(crate) fn lowpass(fc: f64, fs: f64, q: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * fc / fs;
        let alpha = w.sin() / (2.0 * q);
        let cw = w.cos();
        Biquad::from_coeffs(
            (1.0 - cw) / 2.0,
            1.0 - cw,
            (1.0 - cw) / 2.0,
            1.0 + alpha,
            -2.0 * cw,
            1.0 - alpha,
        )
    }

    pub(crate) fn highpass(fc: f64, fs: f64, q: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * fc / fs;
        let alpha = w.sin() / (2.0 * q);
        let cw = w.cos();
        Biquad::from_coeffs(
            (1.0 + cw) / 2.0,
            -(1.0 + cw),
            (1.0 + cw) / 2.0,
            1.0 + alpha,
            -2.0 * cw,
            1.0 - alpha,
        )
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Section Q values for a 4th-order Butterworth response.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_377];

pub(crate) fn butter4_lowpass(fc: f64, fs: f64) -> Vec<Biquad> {
    BUTTER4_Q
        .iter()
        .map(|&q| Biquad::lowpass(fc, fs, q))
        .collect()
}

pub(crate) fn butter4_highpass(fc: f64, fs: f64) -> Vec<Biquad> {
    BUTTER4_Q
        .iter()
        .map(|&q| Biquad::highpass(fc, fs, q))
        .collect()
}

/// 4th-order bandpass characteristic: Butterworth highpass at the low edge
/// cascaded with Butterworth lowpass at the high edge.
pub(crate) fn bandpass4(f_lo: f64, f_hi: f64, fs: f64) -> Vec<Biquad> {
    let mut sections = butter4_highpass(f_lo, fs);
    sections.extend(butter4_lowpass(f_hi, fs));
    sections
}

/// Run a signal through a fresh cascade of sections.
pub(crate) fn filter_cascade(sections: &[Biquad], signal: &[f64]) -> Vec<f64> {
    let mut sections: Vec<Biquad> = sections.to_vec();
    let mut out = signal.to_vec();
    for section in &mut sections {
        for s in &mut out {
            *s = section.step(*s);
        }
    }
    out
}

/// Envelope as the magnitude of the analytic signal (FFT Hilbert transform).
pub(crate) fn analytic_envelope(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    // Analytic-signal weights: keep DC and Nyquist, double positive
    // frequencies, zero negative frequencies.
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == n / 2) {
            continue;
        } else if k < n.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex::new(0.0, 0.0);
        }
    }
    ifft.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| (c * scale).norm()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    fn tail_rms(x: &[f64]) -> f64 {
        let tail = &x[x.len() / 2..];
        (tail.iter().map(|s| s * s).sum::<f64>() / tail.len() as f64).sqrt()
    }

    #[test]
    fn lowpass_passes_low_and_stops_high() {
        let fs = 16_000.0;
        let sections = butter4_lowpass(1_000.0, fs);
        let low = filter_cascade(&sections, &sine(100.0, fs, 8_000));
        let high = filter_cascade(&sections, &sine(6_000.0, fs, 8_000));
        let ref_rms = (0.5f64).sqrt();
        assert!((tail_rms(&low) - ref_rms).abs() / ref_rms < 0.02);
        assert!(tail_rms(&high) / ref_rms < 0.01);
    }

    #[test]
    fn highpass_mirrors_lowpass() {
        let fs = 16_000.0;
        let sections = butter4_highpass(1_000.0, fs);
        let low = filter_cascade(&sections, &sine(100.0, fs, 8_000));
        let high = filter_cascade(&sections, &sine(6_000.0, fs, 8_000));
        let ref_rms = (0.5f64).sqrt();
        assert!(tail_rms(&low) / ref_rms < 0.01);
        assert!((tail_rms(&high) - ref_rms).abs() / ref_rms < 0.02);
    }

    #[test]
    fn bandpass_selects_its_band() {
        let fs = 16_000.0;
        let sections = bandpass4(800.0, 1_200.0, fs);
        let inside = filter_cascade(&sections, &sine(1_000.0, fs, 16_000));
        let below = filter_cascade(&sections, &sine(100.0, fs, 16_000));
        let above = filter_cascade(&sections, &sine(5_000.0, fs, 16_000));
        assert!(tail_rms(&inside) > 10.0 * tail_rms(&below));
        assert!(tail_rms(&inside) > 10.0 * tail_rms(&above));
    }

    #[test]
    fn envelope_of_modulated_tone_tracks_modulator() {
        let fs = 16_000.0;
        let n = 16_000;
        let carrier = sine(2_000.0, fs, n);
        let signal: Vec<f64> = carrier
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let m = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 3.0 * i as f64 / fs).sin();
                m * c
            })
            .collect();
        let env = analytic_envelope(&signal);
        for i in (1_000..n - 1_000).step_by(500) {
            let expected = 0.6 + 0.4 * (2.0 * std::f64::consts::PI * 3.0 * i as f64 / fs).sin();
            assert!((env[i] - expected).abs() < 0.02, "sample {i}");
        }
    }

    #[test]
    fn envelope_of_constant_is_constant() {
        let env = analytic_envelope(&vec![0.5; 256]);
        for e in &env {
            assert!((e - 0.5).abs() < 1e-9);
        }
    }
}
