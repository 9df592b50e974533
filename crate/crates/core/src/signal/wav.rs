//! Minimal WAV codec: 16-bit PCM, mono. Other sample rates are accepted on
//! read and resampled to the 16 kHz canonical rate by `load_audio`.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Canonical processing rate for the whole pipeline.
pub const CANONICAL_RATE: u32 = 16_000;

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::WavFormat(format!("truncated file while reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact_or(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

/// Decode a 16-bit PCM mono WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path)?;
    let mut r = Cursor::new(bytes.as_slice());

    let mut riff = [0u8; 4];
    read_exact_or(&mut r, &mut riff, "RIFF tag")?;
    if &riff != b"RIFF" {
        return Err(Error::WavFormat(format!("{}: missing RIFF tag", path.display())));
    }
    read_u32(&mut r, "RIFF size")?;
    let mut wave = [0u8; 4];
    read_exact_or(&mut r, &mut wave, "WAVE tag")?;
    if &wave != b"WAVE" {
        return Err(Error::WavFormat(format!("{}: missing WAVE tag", path.display())));
    }

    let mut sample_rate = 0u32;
    let mut channels = 0u16;
    let mut bits = 0u16;
    let mut data: Option<Vec<u8>> = None;
    loop {
        let mut tag = [0u8; 4];
        if r.read_exact(&mut tag).is_err() {
            break;
        }
        let size = read_u32(&mut r, "chunk size")? as usize;
        match &tag {
            b"fmt " => {
                let format = read_u16(&mut r, "format code")?;
                channels = read_u16(&mut r, "channel count")?;
                sample_rate = read_u32(&mut r, "sample rate")?;
                read_u32(&mut r, "byte rate")?;
                read_u16(&mut r, "block align")?;
                bits = read_u16(&mut r, "bits per sample")?;
                if format != 1 {
                    return Err(Error::WavFormat(format!(
                        "{}: only PCM (format 1) supported, got {format}",
                        path.display()
                    )));
                }
                // Skip any fmt extension bytes.
                let consumed = 16;
                if size > consumed {
                    let mut skip = vec![0u8; size - consumed];
                    read_exact_or(&mut r, &mut skip, "fmt extension")?;
                }
            }
            b"data" => {
                let mut payload = vec![0u8; size];
                read_exact_or(&mut r, &mut payload, "data chunk")?;
                data = Some(payload);
                if size % 2 == 1 {
                    let mut pad = [0u8; 1];
                    let _ = r.read_exact(&mut pad);
                }
            }
            _ => {
                // Unknown chunk: skip payload plus pad byte.
                let mut skip = vec![0u8; size + (size % 2)];
                read_exact_or(&mut r, &mut skip, "chunk payload")?;
            }
        }
    }

    let data = data
        .ok_or_else(|| Error::WavFormat(format!("{}: no data chunk", path.display())))?;
    if channels != 1 {
        return Err(Error::WavFormat(format!(
            "{}: expected mono, got {channels} channels",
            path.display()
        )));
    }
    if bits != 16 {
        return Err(Error::WavFormat(format!(
            "{}: expected 16-bit samples, got {bits}",
            path.display()
        )));
    }
    // Decode with the same 32767 full-scale the writer uses, so a write/read
    // round trip errs by at most half a quantization step.
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32767.0)
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Encode a waveform as 16-bit PCM mono WAV, clamping samples to [-1, 1].
pub fn write_wav(path: &Path, wav: &Waveform) -> Result<()> {
    let n = wav.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wav.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wav.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &wav.samples {
        let clamped = s.clamp(-1.0, 1.0);
        let q = (clamped * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Linear-interpolation resampler. Adequate for ingest normalization; the
/// corpus itself is synthesized at the canonical rate.
pub fn resample(wav: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if wav.sample_rate == target_rate {
        return Ok(wav.clone());
    }
    let ratio = wav.sample_rate as f64 / target_rate as f64;
    let out_len = ((wav.samples.len() as f64 / ratio).floor() as usize).max(1);
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * ratio;
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let a = wav.samples[i0.min(wav.samples.len() - 1)];
        let b = wav.samples[(i0 + 1).min(wav.samples.len() - 1)];
        out.push(a + frac * (b - a));
    }
    Waveform::new(out, target_rate)
}

/// Read a WAV file and resample it to the canonical 16 kHz rate.
pub fn load_audio(path: &Path) -> Result<Waveform> {
    let wav = read_wav(path)?;
    resample(&wav, CANONICAL_RATE)
}
