use std::path::Path;

use crate::dsp::AudioClip;
use crate::error::{Error, Result};

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Decodes a 16-bit PCM mono RIFF/WAVE file; samples are divided by 32768.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    let bad = |m: &str| Error::Format(format!("wav: {m}"));
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if len < 16 || body + 16 > bytes.len() {
                    return Err(bad("truncated fmt chunk"));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or_else(|| bad("data chunk before fmt chunk"))?;
                if tag != 1 || bits != 16 {
                    return Err(bad(&format!("only 16-bit PCM is supported (format {tag}, {bits} bits)")));
                }
                if channels != 1 {
                    return Err(bad(&format!("expected mono, got {channels} channels")));
                }
                if body + len > bytes.len() {
                    return Err(bad(&format!("truncated data chunk ({} of {len} bytes)", bytes.len() - body)));
                }
                if len % 2 != 0 {
                    return Err(bad("odd data length"));
                }
                let samples = bytes[body..body + len]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioClip::new(samples, rate).map_err(|e| bad(&e.to_string()));
            }
            _ => {}
        }
        pos = body + len + (len & 1);
    }
    Err(bad("no data chunk"))
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Encodes samples in [-1, 1] as 16-bit PCM mono, rounding `x * 32767`.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
