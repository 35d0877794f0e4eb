//! 16-bit PCM mono RIFF/WAVE I/O.

use std::io::{Read, Write};
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

fn wav_err(msg: impl Into<String>) -> Error {
    Error::Wav(msg.into())
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses a complete WAV file image.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(wav_err("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(wav_err(format!(
                "chunk {:?} overruns file",
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err("fmt chunk too short"));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {}
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    let (audio_format, channels, sample_rate, bits) =
        format.ok_or_else(|| wav_err("missing fmt chunk"))?;
    if audio_format != 1 || bits != 16 {
        return Err(wav_err(format!(
            "unsupported encoding: format {audio_format}, {bits} bits (need 16-bit PCM)"
        )));
    }
    if channels != 1 {
        return Err(wav_err(format!("unsupported channel count {channels}")));
    }
    let data = data.ok_or_else(|| wav_err("missing data chunk"))?;
    if data.len() < 2 {
        return Err(wav_err("zero-length data"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM_SCALE)
        .collect();
    Waveform::new(samples, sample_rate)
}

/// Serializes to a canonical 44-byte-header WAV image. Samples are rounded
/// to the nearest 16-bit step and clamped to the representable range.
pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let n = wave.samples().len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_wav(wave))?;
    Ok(())
}
