//! Raw mel feature files: `VMEL`, u32 bands, u32 frames, then
//! `bands * frames` little-endian f32 values, band-major.

use crate::dsp::{Spectrogram, SpectrogramKind, StftParams};
use crate::error::{Result, VnetError};

const MAGIC: &[u8; 4] = b"VMEL";

pub fn encode_mel(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + spec.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(spec.bins as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frames as u32).to_le_bytes());
    for &v in &spec.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_mel(bytes: &[u8]) -> Result<Spectrogram> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(VnetError::format("VMEL header", "missing VMEL magic"));
    }
    let bands = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let frames = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let count = bands
        .checked_mul(frames)
        .filter(|&n| n.checked_mul(4) == Some(bytes.len() - 12))
        .ok_or_else(|| {
            VnetError::format(
                "VMEL body",
                format!("{bands} x {frames} values do not match {} payload bytes", bytes.len() - 12),
            )
        })?;
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    debug_assert_eq!(values.len(), count);
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(VnetError::format("VMEL body", format!("value {i} is not finite")));
    }
    Ok(Spectrogram {
        values,
        bins: bands,
        frames,
        kind: SpectrogramKind::LogMel,
        params: StftParams::MEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let spec = Spectrogram {
            values: vec![-11.5, 0.25, 1.0, 2.0, 3.0, -4.0],
            bins: 2,
            frames: 3,
            kind: SpectrogramKind::LogMel,
            params: StftParams::MEL,
        };
        let bytes = encode_mel(&spec);
        assert_eq!(decode_mel(&bytes).unwrap(), spec);
        assert!(decode_mel(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_mel(b"VMEX\0\0\0\0\0\0\0\0").is_err());
        let mut huge = b"VMEL".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_mel(&huge).is_err());
    }
}
