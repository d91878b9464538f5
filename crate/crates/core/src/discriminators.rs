//! Multi-tier (spectrogram) and multi-period (waveform) discriminators.
//!
//! Every sub-discriminator ends in a single linear layer `omega` applied to
//! the hidden representation `h`, so `score = omega^T h` can be re-evaluated
//! with either side detached.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vnet_tensor::{Buffer, Conv1dOpts, Conv2dOpts, Element, Module, PadMode, ParamGroup, Parameter, Tensor};

use crate::dsp::{StftParams, MAG_GUARD};
use crate::error::{Result, VnetError};
use crate::nn::{Conv2d, Norm};

pub const LRELU_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MtdSubConfig {
    pub pool: usize,
    pub stft: StftParams,
    pub norm: Norm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtdConfig {
    pub subs: Vec<MtdSubConfig>,
    pub channels: usize,
    /// (frequency, time) kernel of the hidden layers.
    pub kernel: (usize, usize),
    /// Time stride of every hidden layer after the first.
    pub time_stride: usize,
    /// Time dilation of the strided hidden layers; one layer per entry.
    pub dilations: Vec<usize>,
    pub final_kernel: (usize, usize),
}

impl Default for MtdConfig {
    fn default() -> Self {
        let [a, b, c] = StftParams::RESOLUTIONS;
        let sub = |pool, stft, norm| MtdSubConfig { pool, stft, norm };
        MtdConfig {
            subs: vec![
                sub(1, a, Norm::Weight),
                sub(2, b, Norm::Spectral),
                sub(4, c, Norm::Spectral),
            ],
            channels: 32,
            kernel: (3, 9),
            time_stride: 2,
            dilations: vec![1, 2, 4],
            final_kernel: (3, 3),
        }
    }
}

impl MtdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subs.is_empty() {
            return Err(VnetError::config("mtd.stft", "at least one sub-discriminator is needed"));
        }
        for s in &self.subs {
            s.stft.validate()?;
            if s.pool == 0 {
                return Err(VnetError::config("mtd.pool", "pooling factor must be positive"));
            }
        }
        let odd = |k: (usize, usize)| k.0 % 2 == 1 && k.1 % 2 == 1;
        if !odd(self.kernel) || !odd(self.final_kernel) {
            return Err(VnetError::config("mtd.kernel", "kernels must be odd in both axes"));
        }
        if self.channels == 0 || self.time_stride == 0 || self.dilations.contains(&0) {
            return Err(VnetError::config("mtd.channels", "channels, stride and dilations must be positive"));
        }
        Ok(())
    }

    /// Shortest waveform every sub can analyse.
    pub fn min_input_len(&self) -> usize {
        self.subs.iter().map(|s| s.stft.win_length * s.pool).max().unwrap_or(0)
    }

    fn hidden_opts(&self) -> Vec<Conv2dOpts> {
        let (kh, kw) = self.kernel;
        let mut v = vec![Conv2dOpts {
            stride: (1, 1),
            padding: (kh / 2, kw / 2),
            dilation: (1, 1),
        }];
        for &d in &self.dilations {
            v.push(Conv2dOpts {
                stride: (1, self.time_stride),
                padding: (kh / 2, d * (kw / 2)),
                dilation: (1, d),
            });
        }
        v
    }

    fn final_opts(&self) -> Conv2dOpts {
        Conv2dOpts {
            stride: (1, 1),
            padding: (self.final_kernel.0 / 2, self.final_kernel.1 / 2),
            dilation: (1, 1),
        }
    }

    /// Analytic score-map shape `(bins, frames)` of sub `m` for `len` samples.
    pub fn score_shape(&self, m: usize, len: usize) -> (usize, usize) {
        let s = &self.subs[m];
        let (mut h, mut w) = (s.stft.bins(), s.stft.frames(len / s.pool));
        let out = |n: usize, k: usize, st: usize, p: usize, d: usize| (n + 2 * p - d * (k - 1) - 1) / st + 1;
        let layers = self.hidden_opts().into_iter().map(|o| (o, self.kernel));
        for (o, k) in layers.chain([(self.final_opts(), self.final_kernel)]) {
            h = out(h, k.0, o.stride.0, o.padding.0, o.dilation.0);
            w = out(w, k.1, o.stride.1, o.padding.1, o.dilation.1);
        }
        (h, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpdConfig {
    pub periods: Vec<usize>,
    /// Hidden channel widths; all but the last hidden layer are strided.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub final_kernel: usize,
}

impl Default for MpdConfig {
    fn default() -> Self {
        MpdConfig {
            periods: vec![2, 3, 5, 7, 11],
            channels: vec![32, 128, 512, 1024, 1024],
            kernel: 5,
            stride: 3,
            final_kernel: 3,
        }
    }
}

fn is_prime(n: usize) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
}

impl MpdConfig {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for &p in &self.periods {
            if !is_prime(p) {
                return Err(VnetError::config("mpd.periods", format!("{p} is not prime")));
            }
            if !seen.insert(p) {
                return Err(VnetError::config("mpd.periods", format!("period {p} repeated")));
            }
        }
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(VnetError::config("mpd.channels", "need at least one positive width"));
        }
        if self.kernel.is_multiple_of(2) || self.final_kernel.is_multiple_of(2) || self.stride == 0 {
            return Err(VnetError::config("mpd.kernel", "kernels must be odd and the stride positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscriminatorConfig {
    pub mtd: MtdConfig,
    pub mpd: MpdConfig,
}

impl DiscriminatorConfig {
    /// Narrow stacks used for quick single-core training.
    pub fn small() -> Self {
        DiscriminatorConfig {
            mtd: MtdConfig {
                channels: 8,
                ..Default::default()
            },
            mpd: MpdConfig {
                channels: vec![16, 32, 64, 64, 64],
                ..Default::default()
            },
        }
    }

    /// Minimal stacks for finite-difference checks on short inputs.
    pub fn tiny() -> Self {
        let sub = |pool, n_fft, hop, win, norm| MtdSubConfig {
            pool,
            stft: StftParams::new(n_fft, hop, win),
            norm,
        };
        DiscriminatorConfig {
            mtd: MtdConfig {
                subs: vec![
                    sub(1, 32, 8, 16, Norm::Weight),
                    sub(2, 16, 4, 8, Norm::Spectral),
                    sub(4, 16, 2, 8, Norm::Spectral),
                ],
                channels: 2,
                kernel: (3, 3),
                time_stride: 2,
                dilations: vec![1, 2],
                final_kernel: (3, 3),
            },
            mpd: MpdConfig {
                periods: vec![2, 3],
                channels: vec![2, 3, 2],
                kernel: 3,
                stride: 2,
                final_kernel: 3,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mtd.validate()?;
        self.mpd.validate()
    }
}

/// One sub-discriminator's result with the `omega^T h` split exposed.
pub struct DiscriminatorOutput<F: Element> {
    pub name: String,
    pub score: Tensor<F>,
    /// Post-activation output of every hidden layer, then the score map.
    pub features: Vec<Tensor<F>>,
    /// Input of the final linear layer.
    pub hidden: Tensor<F>,
    pub omega_weight: Tensor<F>,
    pub omega_bias: Tensor<F>,
    pub omega_opts: Conv2dOpts,
}

impl<F: Element> DiscriminatorOutput<F> {
    /// Re-evaluates `omega^T h` with either side cut from the graph.
    pub fn project(&self, detach_hidden: bool, detach_omega: bool) -> Result<Tensor<F>> {
        let h = if detach_hidden { self.hidden.detach() } else { self.hidden.clone() };
        let (w, b) = if detach_omega {
            (self.omega_weight.detach(), self.omega_bias.detach())
        } else {
            (self.omega_weight.clone(), self.omega_bias.clone())
        };
        Conv2d::apply(&h, &w, &b, self.omega_opts)
    }
}

/// Conv2d stack with a linear final layer.
struct Stack<F: Element> {
    name: String,
    hidden: Vec<Conv2d<F>>,
    last: Conv2d<F>,
}

impl<F: Element> Stack<F> {
    fn forward(&self, x: &Tensor<F>) -> Result<DiscriminatorOutput<F>> {
        let mut h = x.clone();
        let mut features = Vec::with_capacity(self.hidden.len() + 1);
        for layer in &self.hidden {
            h = layer.forward(&h)?.leaky_relu(LRELU_SLOPE);
            features.push(h.clone());
        }
        let w = self.last.weight.effective()?;
        let b = self.last.bias.tensor().clone();
        let score = Conv2d::apply(&h, &w, &b, self.last.opts)?;
        features.push(score.clone());
        Ok(DiscriminatorOutput {
            name: self.name.clone(),
            score,
            features,
            hidden: h,
            omega_weight: w,
            omega_bias: b,
            omega_opts: self.last.opts,
        })
    }

    fn layers(&self) -> impl Iterator<Item = &Conv2d<F>> {
        self.hidden.iter().chain(std::iter::once(&self.last))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<F>> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.last))
    }
}

/// Box-filter average pooling of `[B, T]` signals, dropping the tail.
pub fn avg_pool_tensor<F: Element>(x: &Tensor<F>, factor: usize) -> Result<Tensor<F>> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (b, t) = (x.dim(0), x.dim(1));
    let kernel = Tensor::full(&[1, 1, factor], F::lit(1.0 / factor as f64));
    let opts = Conv1dOpts {
        stride: factor,
        ..Default::default()
    };
    let y = x.reshape(&[b, 1, t])?.conv1d(&kernel, opts)?;
    let n = y.dim(2);
    Ok(y.reshape(&[b, n])?)
}

/// Flattens `[B, 1, T]` or `[B, T]` waveforms to `[B, T]`.
fn as_signals<F: Element>(x: &Tensor<F>) -> Result<Tensor<F>> {
    match x.shape() {
        [b, 1, t] => Ok(x.reshape(&[*b, *t])?),
        [_, _] => Ok(x.clone()),
        s => Err(VnetError::Input(format!("expected a [B, 1, T] waveform, got {s:?}"))),
    }
}

pub struct Mtd<F: Element> {
    pub config: MtdConfig,
    subs: Vec<Stack<F>>,
}

impl<F: Element> Mtd<F> {
    pub fn new(config: MtdConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut subs = Vec::new();
        for (m, sc) in config.subs.iter().enumerate() {
            let name = format!("mtd{}", m + 1);
            let mut hidden = Vec::new();
            for (l, opts) in config.hidden_opts().into_iter().enumerate() {
                let cin = if l == 0 { 1 } else { c };
                hidden.push(Conv2d::new(&format!("{name}.conv{l}"), ParamGroup::Phi, cin, c, config.kernel, opts, sc.norm, rng)?);
            }
            let last = Conv2d::new(
                &format!("{name}.post"),
                ParamGroup::Omega,
                c,
                1,
                config.final_kernel,
                config.final_opts(),
                sc.norm,
                rng,
            )?;
            subs.push(Stack { name, hidden, last });
        }
        Ok(Mtd { config, subs })
    }

    /// Linear magnitude spectrogram `[B, 1, bins, frames]` of every tier.
    pub fn spectrograms(&self, x: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        let x = as_signals(x)?;
        let need = self.config.min_input_len();
        if x.dim(1) < need {
            return Err(VnetError::Input(format!(
                "MTD input of {} samples is shorter than the largest window ({need} samples)",
                x.dim(1)
            )));
        }
        let mut out = Vec::new();
        for sc in &self.config.subs {
            let pooled = avg_pool_tensor(&x, sc.pool)?;
            let s = pooled.stft_magnitude(sc.stft.geometry(), MAG_GUARD)?;
            let (b, bins, frames) = (s.dim(0), s.dim(1), s.dim(2));
            out.push(s.reshape(&[b, 1, bins, frames])?);
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Vec<DiscriminatorOutput<F>>> {
        self.forward_spectrograms(&self.spectrograms(x)?)
    }

    /// Runs the stacks on spectrograms from [`Mtd::spectrograms`].
    pub fn forward_spectrograms(&self, specs: &[Tensor<F>]) -> Result<Vec<DiscriminatorOutput<F>>> {
        if specs.len() != self.subs.len() {
            return Err(VnetError::Input(format!("{} spectrograms for {} tiers", specs.len(), self.subs.len())));
        }
        self.subs.iter().zip(specs).map(|(s, x)| s.forward(x)).collect()
    }

    fn layers(&self) -> impl Iterator<Item = &Conv2d<F>> {
        self.subs.iter().flat_map(|s| s.layers())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<F>> {
        self.subs.iter_mut().flat_map(|s| s.layers_mut())
    }
}

pub struct Mpd<F: Element> {
    pub config: MpdConfig,
    subs: Vec<Stack<F>>,
}

impl<F: Element> Mpd<F> {
    pub fn new(config: MpdConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let n = config.channels.len();
        let mut subs = Vec::new();
        for &p in &config.periods {
            let name = format!("mpd{p}");
            let mut hidden = Vec::new();
            let mut cin = 1;
            for (l, &cout) in config.channels.iter().enumerate() {
                let stride = if l + 1 == n { 1 } else { config.stride };
                let opts = Conv2dOpts {
                    stride: (stride, 1),
                    padding: (config.kernel / 2, 0),
                    dilation: (1, 1),
                };
                hidden.push(Conv2d::new(&format!("{name}.conv{l}"), ParamGroup::Phi, cin, cout, (config.kernel, 1), opts, Norm::Weight, rng)?);
                cin = cout;
            }
            let opts = Conv2dOpts {
                padding: (config.final_kernel / 2, 0),
                ..Default::default()
            };
            let last = Conv2d::new(&format!("{name}.post"), ParamGroup::Omega, cin, 1, (config.final_kernel, 1), opts, Norm::Weight, rng)?;
            subs.push(Stack { name, hidden, last });
        }
        Ok(Mpd { config, subs })
    }

    /// Reflect pads `[B, T]` to a multiple of `p` and folds it to `[B, 1, T/p, p]`.
    pub fn reshape2d(x: &Tensor<F>, p: usize) -> Result<Tensor<F>> {
        let (b, t) = (x.dim(0), x.dim(1));
        let pad = (p - t % p) % p;
        let x = if pad > 0 { x.pad_last(0, pad, PadMode::Reflect)? } else { x.clone() };
        Ok(x.reshape(&[b, 1, (t + pad) / p, p])?)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Vec<DiscriminatorOutput<F>>> {
        let x = as_signals(x)?;
        if x.dim(1) < 2 {
            return Err(VnetError::Input("MPD input needs at least two samples".into()));
        }
        self.config
            .periods
            .iter()
            .zip(&self.subs)
            .map(|(&p, s)| s.forward(&Self::reshape2d(&x, p)?))
            .collect()
    }

    /// First-layer activation of the period-`p` sub (locality probes).
    pub fn first_layer(&self, x: &Tensor<F>, index: usize) -> Result<Tensor<F>> {
        let x = as_signals(x)?;
        let p = self.config.periods[index];
        Ok(self.subs[index].hidden[0].forward(&Self::reshape2d(&x, p)?)?.leaky_relu(LRELU_SLOPE))
    }

    fn layers(&self) -> impl Iterator<Item = &Conv2d<F>> {
        self.subs.iter().flat_map(|s| s.layers())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv2d<F>> {
        self.subs.iter_mut().flat_map(|s| s.layers_mut())
    }
}

/// MTD and MPD together; outputs are ordered MTD tiers then MPD periods.
pub struct Discriminators<F: Element> {
    pub config: DiscriminatorConfig,
    pub mtd: Mtd<F>,
    pub mpd: Mpd<F>,
}

impl<F: Element> Discriminators<F> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mtd = Mtd::new(config.mtd.clone(), &mut rng)?;
        let mpd = Mpd::new(config.mpd.clone(), &mut rng)?;
        Ok(Discriminators { config, mtd, mpd })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Vec<DiscriminatorOutput<F>>> {
        self.forward_with_spectrograms(x, &self.mtd.spectrograms(x)?)
    }

    pub fn forward_with_spectrograms(&self, x: &Tensor<F>, specs: &[Tensor<F>]) -> Result<Vec<DiscriminatorOutput<F>>> {
        let mut out = self.mtd.forward_spectrograms(specs)?;
        out.extend(self.mpd.forward(x)?);
        Ok(out)
    }

    /// Enables or freezes the power iteration of spectral-norm layers.
    pub fn set_sigma_update(&mut self, on: bool) {
        self.mtd.layers_mut().chain(self.mpd.layers_mut()).for_each(|l| l.set_sigma_update(on));
    }

    /// Current singular-value estimates of all spectral-norm layers.
    pub fn sigmas(&self) -> Vec<F> {
        self.mtd.layers().chain(self.mpd.layers()).filter_map(|l| l.weight.sigma()).collect()
    }
}

impl<F: Element> Module<F> for Discriminators<F> {
    fn parameters(&self) -> Vec<&Parameter<F>> {
        self.mtd.layers().chain(self.mpd.layers()).flat_map(|l| l.params()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut p: Vec<&mut Parameter<F>> = self.mtd.layers_mut().flat_map(|l| l.params_mut()).collect();
        p.extend(self.mpd.layers_mut().flat_map(|l| l.params_mut()));
        p
    }

    fn buffers(&self) -> Vec<&Buffer<F>> {
        self.mtd.layers().chain(self.mpd.layers()).flat_map(|l| l.buffers()).collect()
    }
}

/// Flattens outputs into score maps and features, preserving order.
pub fn score_and_features<F: Element>(outputs: &[DiscriminatorOutput<F>]) -> (Vec<Tensor<F>>, Vec<Tensor<F>>) {
    let scores = outputs.iter().map(|o| o.score.clone()).collect();
    let features = outputs.iter().flat_map(|o| o.features.iter().cloned()).collect();
    (scores, features)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(n: usize, seed: u64) -> Tensor<f64> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[1, 1, n], (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    }

    #[test]
    fn output_counts_and_names() {
        let d = Discriminators::<f64>::new(DiscriminatorConfig::tiny(), 0).unwrap();
        let out = d.forward(&noise(256, 1)).unwrap();
        let names: Vec<_> = out.iter().map(|o| o.name.as_str()).collect();
        assert_eq!(names, ["mtd1", "mtd2", "mtd3", "mpd2", "mpd3"]);
        let (scores, feats) = score_and_features(&out);
        assert_eq!(scores.len(), 5);
        assert_eq!(feats.len(), 3 * 4 + 2 * 4);
        assert!(score_and_features::<f64>(&[]).0.is_empty());
    }

    #[test]
    fn projection_reproduces_score() {
        let d = Discriminators::<f64>::new(DiscriminatorConfig::tiny(), 2).unwrap();
        for o in d.forward(&noise(300, 3)).unwrap() {
            let z = o.project(true, true).unwrap();
            for (a, b) in z.data().iter().zip(o.score.data()) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn groups_follow_layer_position() {
        let d = Discriminators::<f64>::new(DiscriminatorConfig::tiny(), 0).unwrap();
        for p in d.parameters() {
            let expect = if p.name().contains(".post.") { ParamGroup::Omega } else { ParamGroup::Phi };
            assert_eq!(p.group(), expect, "{}", p.name());
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let d = Discriminators::<f64>::new(DiscriminatorConfig::default(), 0).unwrap();
        let err = d.forward(&noise(1000, 0)).err().unwrap().to_string();
        assert!(err.contains("largest window"), "{err}");
    }

    #[test]
    fn default_score_shapes_match_arithmetic() {
        let cfg = MtdConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mtd = Mtd::<f64>::new(cfg.clone(), &mut rng).unwrap();
        let out = mtd.forward(&noise(8192, 4)).unwrap();
        for (m, o) in out.iter().enumerate() {
            let (h, w) = cfg.score_shape(m, 8192);
            assert_eq!(o.score.shape(), &[1, 1, h, w]);
        }
        // 8192 samples, hop 120 -> 69 frames -> 35 -> 18 -> 9.
        assert_eq!(cfg.score_shape(0, 8192), (513, 9));
    }

    #[test]
    fn period_signal_gives_constant_columns() {
        let x = Tensor::<f64>::new(&[1, 8], vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]).unwrap();
        let r = Mpd::reshape2d(&x, 2).unwrap();
        assert_eq!(r.shape(), &[1, 1, 4, 2]);
        assert!(r.data().chunks(2).all(|row| row == [1.0, -1.0]));
    }

    #[test]
    fn prime_validation() {
        let bad = MpdConfig {
            periods: vec![2, 4],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(is_prime(11) && !is_prime(1) && !is_prime(9));
    }
}
