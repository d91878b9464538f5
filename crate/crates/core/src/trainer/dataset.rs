//! Training clips and segment sampling.

use std::path::{Path, PathBuf};

use rand::Rng;
use vnet_tensor::{reflect_index, Element, Tensor};

use crate::dsp::wav::load_wav;
use crate::dsp::{log_mel, AudioClip, MelFilterbank, StftParams, HOP, SAMPLE_RATE};
use crate::error::{Result, VnetError};

pub struct Dataset {
    pub names: Vec<PathBuf>,
    clips: Vec<Vec<f64>>,
}

/// Every `.wav` below `root`, in lexicographic path order.
pub fn find_wavs(root: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let rd = std::fs::read_dir(dir).map_err(|e| VnetError::io(dir, e))?;
        for entry in rd {
            let path = entry.map_err(|e| VnetError::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(path);
            }
        }
        Ok(())
    }
    if !root.is_dir() {
        return Err(VnetError::Input(format!("dataset directory {} does not exist", root.display())));
    }
    let mut out = Vec::new();
    walk(root, &mut out)?;
    out.sort();
    Ok(out)
}

impl Dataset {
    pub fn scan(root: &Path) -> Result<Self> {
        let names = find_wavs(root)?;
        let clips = names.iter().map(|p| load_wav(p).map(|c| c.samples)).collect::<Result<Vec<_>>>()?;
        Self::build(names, clips).map_err(|_| VnetError::Input(format!("no .wav files under {}", root.display())))
    }

    pub fn from_clips(clips: Vec<AudioClip>) -> Result<Self> {
        if clips.iter().any(|c| c.sample_rate != SAMPLE_RATE) {
            return Err(VnetError::Input(format!("dataset clips must be {SAMPLE_RATE} Hz")));
        }
        let names = (0..clips.len()).map(|i| PathBuf::from(format!("clip{i}"))).collect();
        Self::build(names, clips.into_iter().map(|c| c.samples).collect())
    }

    fn build(names: Vec<PathBuf>, clips: Vec<Vec<f64>>) -> Result<Self> {
        if clips.is_empty() {
            return Err(VnetError::Input("dataset is empty".into()));
        }
        if let Some(i) = clips.iter().position(|c| c.is_empty()) {
            return Err(VnetError::Input(format!("{} has no samples", names[i].display())));
        }
        Ok(Dataset { names, clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clip(&self, i: usize) -> &[f64] {
        &self.clips[i]
    }
}

/// Waveform crops and the mel frames that condition them.
pub struct Batch<F: Element> {
    /// `[B, 100, segment / 256]`
    pub mel: Tensor<F>,
    /// `[B, 1, segment]`
    pub wav: Tensor<F>,
    pub sources: Vec<(usize, usize)>,
}

/// Crop of `segment` samples starting at `start`; reflect padded past the end.
pub fn crop(clip: &[f64], start: usize, segment: usize) -> Vec<f64> {
    (start..start + segment)
        .map(|i| if i < clip.len() { clip[i] } else { clip[reflect_index(i as isize, clip.len())] })
        .collect()
}

/// Log-mel of a hop-aligned crop, truncated to `len / 256` frames.
pub fn conditioning_mel(x: &[f64], fb: &MelFilterbank) -> Result<Vec<f64>> {
    let frames = x.len() / HOP;
    let m = log_mel(x, StftParams::MEL, fb)?;
    let mut out = Vec::with_capacity(m.bins * frames);
    for b in 0..m.bins {
        out.extend_from_slice(&m.values[b * m.frames..b * m.frames + frames]);
    }
    Ok(out)
}

/// Random hop-aligned crops; each record is `(clip index, start sample)`.
pub fn sample_batch<F: Element>(
    data: &Dataset,
    segment: usize,
    batch: usize,
    fb: &MelFilterbank,
    rng: &mut impl Rng,
) -> Result<Batch<F>> {
    if data.is_empty() {
        return Err(VnetError::Input("dataset is empty".into()));
    }
    if segment == 0 || !segment.is_multiple_of(HOP) {
        return Err(VnetError::config("data.segment_length", format!("{segment} is not a multiple of {HOP}")));
    }
    let frames = segment / HOP;
    let mut wav = Vec::with_capacity(batch * segment);
    let mut mel = Vec::with_capacity(batch * fb.bands * frames);
    let mut sources = Vec::with_capacity(batch);
    for _ in 0..batch {
        let idx = rng.random_range(0..data.len());
        let clip = data.clip(idx);
        let slots = clip.len().saturating_sub(segment) / HOP;
        let start = rng.random_range(0..=slots) * HOP;
        let x = crop(clip, start, segment);
        mel.extend(conditioning_mel(&x, fb)?);
        wav.extend(x);
        sources.push((idx, start));
    }
    let lit = |v: Vec<f64>| v.into_iter().map(F::lit).collect::<Vec<F>>();
    Ok(Batch {
        mel: Tensor::new(&[batch, fb.bands, frames], lit(mel))?,
        wav: Tensor::new(&[batch, 1, segment], lit(wav))?,
        sources,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn data() -> Dataset {
        let a = AudioClip::new((0..30000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect(), SAMPLE_RATE).unwrap();
        let b = AudioClip::new(vec![0.1; 3000], SAMPLE_RATE).unwrap();
        Dataset::from_clips(vec![a, b]).unwrap()
    }

    #[test]
    fn crops_are_aligned_and_shaped() {
        let d = data();
        let fb = MelFilterbank::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let b: Batch<f64> = sample_batch(&d, 8192, 2, &fb, &mut rng).unwrap();
            assert_eq!(b.mel.shape(), &[2, 100, 32]);
            assert_eq!(b.wav.shape(), &[2, 1, 8192]);
            assert!(b.sources.iter().all(|&(_, s)| s % 256 == 0));
        }
    }

    #[test]
    fn seed_fixes_the_sequence() {
        let d = data();
        let fb = MelFilterbank::standard();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            (0..5)
                .map(|_| sample_batch::<f64>(&d, 4096, 1, &fb, &mut rng).unwrap().sources)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn short_clip_is_reflect_padded() {
        let c = crop(&[1.0, 2.0, 3.0], 0, 6);
        assert_eq!(c, [1.0, 2.0, 3.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn missing_dir_names_the_path() {
        let e = Dataset::scan(Path::new("/no/such/dir")).err().unwrap().to_string();
        assert!(e.contains("/no/such/dir"), "{e}");
    }
}
