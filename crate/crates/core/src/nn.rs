//! Convolution layers with optional weight reparameterization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vnet_tensor::{Buffer, Conv1dOpts, Conv2dOpts, Element, ParamGroup, Parameter, Tensor};

use crate::error::Result;

/// Weight reparameterization of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    Plain,
    Weight,
    Spectral,
}

/// Power iterations used to initialize the spectral-norm state.
pub const SPECTRAL_WARMUP: usize = 20;

pub(crate) fn uniform<F: Element>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<F> {
    (0..n).map(|_| F::lit(rng.random_range(-bound..=bound))).collect()
}

/// Weight tensor plus the state its normalization needs.
pub struct NormWeight<F: Element> {
    v: Parameter<F>,
    gain: Option<Parameter<F>>,
    sn_u: Option<Buffer<F>>,
    sn_sigma: Option<Buffer<F>>,
    update_sigma: bool,
}

impl<F: Element> NormWeight<F> {
    fn new(name: &str, group: ParamGroup, shape: &[usize], fan_in: usize, norm: Norm, rng: &mut ChaCha8Rng) -> Result<Self> {
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data: Vec<F> = uniform(rng, n, bound);
        let rows = shape[0];
        let cols = n / rows;
        let mut w = NormWeight {
            v: Parameter::new(format!("{name}.weight"), group, shape, data)?,
            gain: None,
            sn_u: None,
            sn_sigma: None,
            update_sigma: true,
        };
        match norm {
            Norm::Plain => {}
            Norm::Weight => {
                let g = w
                    .v
                    .data()
                    .chunks(cols)
                    .map(|r| r.iter().map(|&x| x * x).sum::<F>().sqrt())
                    .collect();
                w.gain = Some(Parameter::new(format!("{name}.weight_g"), group, &[rows], g)?);
            }
            Norm::Spectral => {
                let mut u: Vec<F> = uniform(rng, rows, 1.0);
                let sigma = vnet_tensor::ops::norm::power_iteration(w.v.data(), rows, cols, &mut u, SPECTRAL_WARMUP);
                w.sn_u = Some(Buffer::new(format!("{name}.sn_u"), u));
                w.sn_sigma = Some(Buffer::new(format!("{name}.sn_sigma"), vec![sigma]));
            }
        }
        Ok(w)
    }

    pub fn norm(&self) -> Norm {
        match (&self.gain, &self.sn_u) {
            (Some(_), _) => Norm::Weight,
            (None, Some(_)) => Norm::Spectral,
            _ => Norm::Plain,
        }
    }

    /// The weight actually used by the convolution. A spectral-norm layer
    /// advances its power iteration by one step per call unless frozen.
    pub fn effective(&self) -> Result<Tensor<F>> {
        let v = self.v.tensor();
        if let Some(g) = &self.gain {
            return Ok(v.weight_norm(g.tensor())?);
        }
        if let (Some(u), Some(sigma)) = (&self.sn_u, &self.sn_sigma) {
            if self.update_sigma {
                let (w, s) = u.with_mut(|u| v.spectral_norm(u, 1))?;
                sigma.set(vec![s])?;
                return Ok(w);
            }
            return Ok(v.scale_by_sigma(sigma.get()[0]));
        }
        Ok(v.clone())
    }

    /// Last singular-value estimate of a spectral-norm layer.
    pub fn sigma(&self) -> Option<F> {
        self.sn_sigma.as_ref().map(|s| s.get()[0])
    }

    fn params(&self) -> Vec<&Parameter<F>> {
        std::iter::once(&self.v).chain(self.gain.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        std::iter::once(&mut self.v).chain(self.gain.as_mut()).collect()
    }

    fn buffers(&self) -> Vec<&Buffer<F>> {
        self.sn_u.iter().chain(self.sn_sigma.iter()).collect()
    }
}

pub struct Conv1d<F: Element> {
    pub weight: NormWeight<F>,
    pub bias: Parameter<F>,
    pub opts: Conv1dOpts,
}

impl<F: Element> Conv1d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        group: ParamGroup,
        cin: usize,
        cout: usize,
        kernel: usize,
        opts: Conv1dOpts,
        norm: Norm,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let cin_g = cin / opts.groups.max(1);
        let fan_in = cin_g * kernel;
        let weight = NormWeight::new(name, group, &[cout, cin_g, kernel], fan_in, norm, rng)?;
        let bias = uniform(rng, cout, 1.0 / (fan_in as f64).sqrt());
        Ok(Conv1d {
            weight,
            bias: Parameter::new(format!("{name}.bias"), group, &[cout], bias)?,
            opts,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.conv1d(&self.weight.effective()?, self.opts)?.add_bias(self.bias.tensor())?)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.weight.params();
        p.push(&self.bias);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut p = self.weight.params_mut();
        p.push(&mut self.bias);
        p
    }

    pub fn buffers(&self) -> Vec<&Buffer<F>> {
        self.weight.buffers()
    }

    /// Zeroes weight and bias (used for silent-output fixtures).
    pub fn zero(&mut self) -> Result<()> {
        for p in self.params_mut() {
            let n = p.data().len();
            p.set_data(vec![F::zero(); n])?;
        }
        Ok(())
    }
}

/// Transposed convolution; weight `[C_in, C_out, K]`.
pub struct ConvTranspose1d<F: Element> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
    pub stride: usize,
    pub padding: usize,
}

impl<F: Element> ConvTranspose1d<F> {
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let fan_in = cout * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Ok(ConvTranspose1d {
            weight: Parameter::new(format!("{name}.weight"), ParamGroup::Theta, &[cin, cout, kernel], uniform(rng, cin * cout * kernel, bound))?,
            bias: Parameter::new(format!("{name}.bias"), ParamGroup::Theta, &[cout], uniform(rng, cout, bound))?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(x.conv_transpose1d(self.weight.tensor(), self.stride, self.padding)?.add_bias(self.bias.tensor())?)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub struct Conv2d<F: Element> {
    pub weight: NormWeight<F>,
    pub bias: Parameter<F>,
    pub opts: Conv2dOpts,
}

impl<F: Element> Conv2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        group: ParamGroup,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        opts: Conv2dOpts,
        norm: Norm,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fan_in = cin * kernel.0 * kernel.1;
        let weight = NormWeight::new(name, group, &[cout, cin, kernel.0, kernel.1], fan_in, norm, rng)?;
        let bias = uniform(rng, cout, 1.0 / (fan_in as f64).sqrt());
        Ok(Conv2d {
            weight,
            bias: Parameter::new(format!("{name}.bias"), group, &[cout], bias)?,
            opts,
        })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let w = self.weight.effective()?;
        Self::apply(x, &w, self.bias.tensor(), self.opts)
    }

    pub fn apply(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>, opts: Conv2dOpts) -> Result<Tensor<F>> {
        Ok(x.conv2d(w, opts)?.add_bias(b)?)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.weight.params();
        p.push(&self.bias);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut p = self.weight.params_mut();
        p.push(&mut self.bias);
        p
    }

    pub fn buffers(&self) -> Vec<&Buffer<F>> {
        self.weight.buffers()
    }

    pub fn set_sigma_update(&mut self, on: bool) {
        self.weight.update_sigma = on;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn weight_norm_starts_at_the_raw_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Conv1d::<f64>::new("c", ParamGroup::Phi, 2, 3, 5, Conv1dOpts::default(), Norm::Weight, &mut rng).unwrap();
        let eff = c.weight.effective().unwrap();
        for (a, b) in eff.data().iter().zip(c.weight.v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let names: Vec<_> = c.params().iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names, ["c.weight", "c.weight_g", "c.bias"]);
    }

    #[test]
    fn spectral_layer_tracks_sigma_and_can_freeze() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Conv2d::<f64>::new("s", ParamGroup::Phi, 2, 4, (3, 3), Conv2dOpts::default(), Norm::Spectral, &mut rng).unwrap();
        let s0 = c.weight.sigma().unwrap();
        assert!(s0 > 0.0);
        c.set_sigma_update(false);
        let a = c.weight.effective().unwrap();
        let b = c.weight.effective().unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(c.buffers().len(), 2);
    }
}
