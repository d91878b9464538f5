//! Binary portable graymap (P5) output.

use crate::dsp::{Spectrogram, LOG_FLOOR};

/// Renders a log spectrogram: width = frames, height = bins with the lowest
/// bin at the bottom. Values map linearly from `[ln LOG_FLOOR, max]` onto
/// `[0, 255]`.
pub fn render_log_spectrogram(spec: &Spectrogram) -> Vec<u8> {
    let lo = LOG_FLOOR.ln();
    let hi = spec.values.iter().copied().fold(lo, f64::max);
    let range = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", spec.frames, spec.bins).into_bytes();
    for row in (0..spec.bins).rev() {
        for f in 0..spec.frames {
            let v = spec.at(row, f);
            let level = if range > 0.0 { ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) } else { 0.0 };
            out.push(level as u8);
        }
    }
    out
}

/// Parses a P5 image into (width, height, pixels).
pub fn parse_pgm(bytes: &[u8]) -> Option<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos + 1..)?.to_vec();
    (pixels.len() == w.checked_mul(h)?).then_some((w, h, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{SpectrogramKind, StftParams};

    #[test]
    fn bottom_up_rows_and_round_trip() {
        let spec = Spectrogram {
            values: vec![0.0, 0.0, LOG_FLOOR.ln(), LOG_FLOOR.ln()],
            bins: 2,
            frames: 2,
            kind: SpectrogramKind::LogMel,
            params: StftParams::MEL,
        };
        let img = render_log_spectrogram(&spec);
        let (w, h, px) = parse_pgm(&img).unwrap();
        assert_eq!((w, h), (2, 2));
        // Bin 1 (floor) is the top row, bin 0 (max) the bottom.
        assert_eq!(px, vec![0, 0, 255, 255]);
    }
}
