//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::param::Parameter;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
}

pub struct Adam<F: Element> {
    pub config: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments<F>>,
}

impl<F: Element> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Moments keyed by parameter name, in name order.
    pub fn state(&self) -> &BTreeMap<String, Moments<F>> {
        &self.state
    }

    pub fn restore(&mut self, step: u64, state: BTreeMap<String, Moments<F>>) {
        self.step = step;
        self.state = state;
    }

    /// Applies one update to every parameter that holds a gradient.
    /// Parameters without a gradient are left untouched.
    pub fn step(&mut self, params: Vec<&mut Parameter<F>>) -> Result<()> {
        let grads: Vec<Option<Vec<F>>> = params.iter().map(|p| p.grad()).collect();
        for (p, g) in params.iter().zip(&grads) {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite(format!("gradient of {}", p.name())));
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let bias1 = 1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let step_size = F::lit(c.lr / bias1);
        let bias2_sqrt = F::lit(bias2.sqrt());
        let eps = F::lit(c.eps);
        for (p, g) in params.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let n = g.len();
            let st = self.state.entry(p.name().to_string()).or_insert_with(|| Moments {
                m: vec![F::zero(); n],
                v: vec![F::zero(); n],
            });
            let mut data = p.data().to_vec();
            for i in 0..n {
                st.m[i] = b1 * st.m[i] + (F::one() - b1) * g[i];
                st.v[i] = b2 * st.v[i] + (F::one() - b2) * g[i] * g[i];
                let denom = st.v[i].sqrt() / bias2_sqrt + eps;
                data[i] = data[i] - step_size * st.m[i] / denom;
            }
            p.set_data(data)?;
        }
        Ok(())
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Element>(params: &[&Parameter<F>], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .map(|g| g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = F::lit(max_norm / total);
        for p in params {
            if let Some(g) = p.grad() {
                p.set_grad(Some(g.into_iter().map(|v| v * s).collect()));
            }
        }
    }
    total
}
