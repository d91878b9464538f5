use crate::error::{Result, VnetError};

/// Mono waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(VnetError::Input("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(VnetError::Input(format!("sample {i} is not finite")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn is_silent(&self) -> bool {
        self.samples.iter().all(|v| v.abs() < 1e-8)
    }
}

/// Non-overlapping mean over windows of `factor` samples; a short tail is
/// dropped.
pub fn avg_pool(x: &[f64], factor: usize) -> Result<Vec<f64>> {
    if factor == 0 {
        return Err(VnetError::Input("pooling factor must be >= 1".into()));
    }
    Ok(x.chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect())
}

/// Reflect pads `x` to a multiple of `period` and returns the row-major
/// `[ceil(T / p), p]` matrix with its height.
pub fn reshape2d(x: &[f64], period: usize) -> Result<(Vec<f64>, usize)> {
    if period == 0 {
        return Err(VnetError::Input("period must be >= 1".into()));
    }
    let rows = x.len().div_ceil(period);
    let mut out = x.to_vec();
    for i in x.len()..rows * period {
        out.push(x[vnet_tensor::reflect_index(i as isize, x.len())]);
    }
    Ok((out, rows))
}
