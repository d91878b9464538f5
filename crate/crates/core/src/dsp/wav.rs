//! RIFF/WAVE PCM-16 reader and writer.

use std::path::Path;

use crate::dsp::{resample, AudioClip, SAMPLE_RATE};
use crate::error::{Result, VnetError};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

#[derive(Debug, Clone, Copy)]
struct Format {
    channels: u16,
    sample_rate: u32,
}

fn parse_fmt(body: &[u8]) -> Result<Format> {
    if body.len() < 16 {
        return Err(VnetError::format("fmt ", format!("chunk is {} bytes, need at least 16", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    if tag == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(VnetError::format("fmt ", "extensible format without a sub-format GUID"));
        }
        tag = u16_at(body, 24);
    }
    if tag != FORMAT_PCM {
        return Err(VnetError::format("fmt ", format!("format tag {tag} is not integer PCM")));
    }
    if bits != 16 {
        return Err(VnetError::format("fmt ", format!("{bits}-bit samples, only 16-bit PCM is supported")));
    }
    if channels != 1 && channels != 2 {
        return Err(VnetError::format("fmt ", format!("{channels} channels, only mono or stereo is supported")));
    }
    if block_align != channels * 2 {
        return Err(VnetError::format("fmt ", format!("block align {block_align} does not match {channels} x 16-bit")));
    }
    if sample_rate == 0 {
        return Err(VnetError::format("fmt ", "sample rate is zero"));
    }
    Ok(Format { channels, sample_rate })
}

/// Decodes a WAV byte stream at its native sample rate. Stereo is averaged
/// to mono; samples are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(VnetError::format("RIFF", "missing RIFF header"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(VnetError::format("RIFF", "form type is not WAVE"));
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let name = String::from_utf8_lossy(id).into_owned();
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let end = start.checked_add(size).filter(|&e| e <= bytes.len()).ok_or_else(|| {
            VnetError::format(
                name.clone(),
                format!("declares {size} bytes but only {} remain", bytes.len() - start),
            )
        })?;
        let body = &bytes[start..end];
        match id {
            b"fmt " => format = Some(parse_fmt(body)?),
            b"data" => {
                let fmt = format.ok_or_else(|| VnetError::format("data", "data chunk before fmt chunk"))?;
                let frame = fmt.channels as usize * 2;
                if !body.len().is_multiple_of(frame) {
                    return Err(VnetError::format(
                        "data",
                        format!("{} bytes is not a whole number of {frame}-byte frames", body.len()),
                    ));
                }
                let samples = body
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: f64 = f.chunks_exact(2).map(|s| i16::from_le_bytes([s[0], s[1]]) as f64).sum();
                        sum / fmt.channels as f64 / 32768.0
                    })
                    .collect();
                return AudioClip::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = end + (size & 1);
    }
    Err(match format {
        None => VnetError::format("fmt ", "no fmt chunk"),
        Some(_) => VnetError::format("data", "no data chunk"),
    })
}

/// PCM-16 mono encoding; samples are clamped to the representable range.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Reads a WAV file at its native rate.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| VnetError::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        VnetError::Format { chunk, msg } => VnetError::format(chunk, format!("{msg} ({})", path.display())),
        other => other,
    })
}

/// Reads a WAV file and resamples it to the pipeline rate.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let clip = read_wav(path)?;
    if clip.sample_rate == SAMPLE_RATE {
        Ok(clip)
    } else {
        resample(&clip, SAMPLE_RATE)
    }
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, encode_wav(clip)).map_err(|e| VnetError::io(path, e))
}
