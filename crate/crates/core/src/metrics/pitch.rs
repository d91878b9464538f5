use crate::dsp::{HOP, SAMPLE_RATE};

pub const WINDOW: usize = 1024;
pub const THRESHOLD: f64 = 0.3;
pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 800.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub frame_hop: usize,
    /// Hz per frame; 0 means unvoiced.
    pub f0: Vec<f64>,
}

impl PitchTrack {
    pub fn voiced(&self) -> Vec<bool> {
        self.f0.iter().map(|&f| f > 0.0).collect()
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }
}

/// f0 of one frame of `WINDOW` samples by cumulative-mean-normalized
/// difference; `None` when no lag falls below the threshold.
pub fn yin_frame(frame: &[f64], sample_rate: u32) -> Option<f64> {
    let sr = sample_rate as f64;
    let tau_min = (sr / F0_MAX).floor() as usize;
    let tau_max = (sr / F0_MIN).ceil() as usize;
    if frame.len() <= tau_max + 1 {
        return None;
    }
    let w = frame.len() - tau_max - 1;
    let energy: f64 = frame[..w].iter().map(|v| v * v).sum();
    if energy < 1e-10 {
        return None;
    }
    let mut d = vec![0.0; tau_max + 2];
    for (tau, dt) in d.iter_mut().enumerate().skip(1) {
        *dt = (0..w).map(|j| (frame[j] - frame[j + tau]).powi(2)).sum();
    }
    let mut cmnd = vec![1.0; d.len()];
    let mut running = 0.0;
    for tau in 1..d.len() {
        running += d[tau];
        cmnd[tau] = if running > 0.0 { d[tau] * tau as f64 / running } else { 1.0 };
    }
    let mut tau = (tau_min..=tau_max).find(|&t| cmnd[t] < THRESHOLD)?;
    while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
        tau += 1;
    }
    // Parabolic refinement on the raw difference function.
    let (a, b, c) = (d[tau - 1], d[tau], d[tau + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { (0.5 * (a - c) / denom).clamp(-1.0, 1.0) } else { 0.0 };
    let period = tau as f64 + shift;
    let f0 = sr / period;
    (F0_MIN..=F0_MAX).contains(&f0).then_some(f0)
}

/// Frame-wise pitch with a 1024-sample window and 256-sample hop.
pub fn pitch_track(x: &[f64]) -> PitchTrack {
    let frames = if x.len() >= WINDOW { 1 + (x.len() - WINDOW) / HOP } else { 0 };
    let f0 = (0..frames)
        .map(|f| yin_frame(&x[f * HOP..f * HOP + WINDOW], SAMPLE_RATE).unwrap_or(0.0))
        .collect();
    PitchTrack { frame_hop: HOP, f0 }
}

/// RMS of the relative pitch deviation over frames voiced in both tracks
/// (`None` if there are none) and the F1 score of the voicing decisions of
/// `est` against `reference`.
pub fn periodicity_and_vuv(reference: &PitchTrack, est: &PitchTrack) -> (Option<f64>, f64) {
    let n = reference.len().min(est.len());
    let (mut sq, mut both) = (0.0, 0usize);
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let (r, e) = (reference.f0[i], est.f0[i]);
        match (r > 0.0, e > 0.0) {
            (true, true) => {
                tp += 1;
                both += 1;
                sq += ((r - e) / r).powi(2);
            }
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => {}
        }
    }
    let periodicity = (both > 0).then(|| (sq / both as f64).sqrt());
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 { 1.0 } else { 2.0 * tp as f64 / denom as f64 };
    (periodicity, f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn sine(f: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 24000.0).sin()).collect()
    }

    #[test]
    fn sine_pitch_is_tracked() {
        let t = pitch_track(&sine(200.0, 12000));
        assert!(t.len() >= 4);
        for &f in &t.f0 {
            assert!((f - 200.0).abs() <= 1.0, "{f}");
        }
    }

    #[test]
    fn silence_and_noise_are_unvoiced() {
        assert!(pitch_track(&vec![0.0; 8000]).f0.iter().all(|&f| f == 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let noise: Vec<f64> = (0..24000).map(|_| rng.random_range(-0.5..0.5)).collect();
        let t = pitch_track(&noise);
        let unvoiced = t.f0.iter().filter(|&&f| f == 0.0).count();
        assert!(unvoiced as f64 >= 0.9 * t.len() as f64, "{unvoiced}/{}", t.len());
    }

    #[test]
    fn hand_cases() {
        let a = PitchTrack { frame_hop: 256, f0: vec![100.0, 200.0, 0.0, 0.0] };
        assert_eq!(periodicity_and_vuv(&a, &a), (Some(0.0), 1.0));
        let comp = PitchTrack { frame_hop: 256, f0: vec![0.0, 0.0, 150.0, 150.0] };
        assert_eq!(periodicity_and_vuv(&a, &comp), (None, 0.0));
        let scaled = PitchTrack { frame_hop: 256, f0: a.f0.iter().map(|f| f * 1.05).collect() };
        let (p, f1) = periodicity_and_vuv(&a, &scaled);
        assert!((p.unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(f1, 1.0);
    }
}
