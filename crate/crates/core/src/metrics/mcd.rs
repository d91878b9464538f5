use std::f64::consts::{LN_10, PI, SQRT_2};

use crate::dsp::{log_mel, MelFilterbank, StftParams};
use crate::error::Result;

pub const N_CEPSTRA: usize = 13;

/// `10 sqrt(2) / ln 10`, turning cepstral distance into decibels.
pub const MCD_SCALE: f64 = 10.0 * SQRT_2 / LN_10;

/// Orthonormal DCT-II coefficients 1..=`count` of one log spectrum.
pub fn dct_cepstrum(log_spec: &[f64], count: usize) -> Vec<f64> {
    let n = log_spec.len() as f64;
    (1..=count)
        .map(|k| {
            let s: f64 = log_spec
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * (2.0 / n).sqrt()
        })
        .collect()
}

/// Per-frame mel cepstra (c1..c13, c0 dropped).
pub fn mel_cepstra(x: &[f64], fb: &MelFilterbank) -> Result<Vec<Vec<f64>>> {
    let m = log_mel(x, StftParams::MEL, fb)?;
    Ok((0..m.frames).map(|f| dct_cepstrum(&m.frame(f), N_CEPSTRA)).collect())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum-cost monotone alignment with steps (1,0), (0,1), (1,1).
pub struct DtwResult {
    pub path: Vec<(usize, usize)>,
    pub total: f64,
}

impl DtwResult {
    pub fn mean(&self) -> f64 {
        self.total / self.path.len().max(1) as f64
    }
}

pub fn dtw(a: &[Vec<f64>], b: &[Vec<f64>]) -> DtwResult {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return DtwResult {
            path: Vec::new(),
            total: 0.0,
        };
    }
    let cost: Vec<f64> = (0..n * m).map(|k| dist(&a[k / m], &b[k % m])).collect();
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = cost[i * m + j];
            acc[i * m + j] = if i == 0 && j == 0 {
                c
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(acc[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    best = best.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    best = best.min(acc[i * m + j - 1]);
                }
                c + best
            };
        }
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = vec![(i, j)];
    while i > 0 || j > 0 {
        let candidates = [
            (i > 0 && j > 0).then(|| (i - 1, j - 1)),
            (i > 0).then(|| (i - 1, j)),
            (j > 0).then(|| (i, j - 1)),
        ];
        let (ni, nj) = candidates
            .into_iter()
            .flatten()
            .min_by(|p, q| acc[p.0 * m + p.1].total_cmp(&acc[q.0 * m + q.1]))
            .expect("a predecessor exists");
        i = ni;
        j = nj;
        path.push((i, j));
    }
    path.reverse();
    DtwResult {
        total: acc[n * m - 1],
        path,
    }
}

/// Mel-cepstral distortion in dB over the aligned frames; `None` when either
/// signal is silent.
pub fn mcd(x: &[f64], x_hat: &[f64], fb: &MelFilterbank) -> Result<Option<f64>> {
    let silent = |v: &[f64]| v.iter().all(|s| s.abs() < 1e-8);
    if silent(x) || silent(x_hat) {
        return Ok(None);
    }
    let a = mel_cepstra(x, fb)?;
    let b = mel_cepstra(x_hat, fb)?;
    Ok(Some(MCD_SCALE * dtw(&a, &b).mean()))
}

/// Frame-paired distance without alignment (truncated to the shorter).
pub fn unaligned_mean(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len().min(b.len());
    (0..n).map(|i| dist(&a[i], &b[i])).sum::<f64>() / n.max(1) as f64
}
