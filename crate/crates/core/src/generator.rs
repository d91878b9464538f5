//! Mel-conditioned waveform generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vnet_tensor::{no_grad, Buffer, Conv1dOpts, Element, LvcOpts, Module, PadMode, ParamGroup, Parameter, Tensor};

use crate::dsp::{AudioClip, Spectrogram, HOP, N_MELS, SAMPLE_RATE};
use crate::error::{Result, VnetError};
use crate::nn::{Conv1d, ConvTranspose1d, Norm};

pub const LRELU_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_mels: usize,
    pub upsample_rates: Vec<usize>,
    pub upsample_kernel_sizes: Vec<usize>,
    pub channels_initial: usize,
    pub mrf_kernel_sizes: Vec<usize>,
    pub mrf_dilations: Vec<Vec<usize>>,
    pub lvc_enabled: bool,
    /// LVC blocks follow the first `lvc_stages` upsampling stages.
    pub lvc_stages: usize,
    pub lvc_layers_per_block: usize,
    pub lvc_kernel_size: usize,
    pub kernel_predictor_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_mels: N_MELS,
            upsample_rates: vec![8, 8, 2, 2],
            upsample_kernel_sizes: vec![16, 16, 4, 4],
            channels_initial: 128,
            mrf_kernel_sizes: vec![3, 7, 11],
            mrf_dilations: vec![vec![1, 3, 5]; 3],
            lvc_enabled: true,
            lvc_stages: 2,
            lvc_layers_per_block: 1,
            lvc_kernel_size: 3,
            kernel_predictor_channels: 64,
        }
    }
}

impl GeneratorConfig {
    /// Full-width variant (512 initial channels).
    pub fn full() -> Self {
        GeneratorConfig {
            channels_initial: 512,
            kernel_predictor_channels: 128,
            ..Default::default()
        }
    }

    /// Narrow variant that trains on one CPU core in minutes.
    pub fn small() -> Self {
        GeneratorConfig {
            channels_initial: 32,
            mrf_kernel_sizes: vec![3, 7],
            mrf_dilations: vec![vec![1, 3], vec![1, 3]],
            kernel_predictor_channels: 32,
            ..Default::default()
        }
    }

    /// Minimal network for finite-difference checks.
    pub fn tiny() -> Self {
        GeneratorConfig {
            upsample_rates: vec![8, 4, 8],
            upsample_kernel_sizes: vec![8, 8, 8],
            channels_initial: 8,
            mrf_kernel_sizes: vec![3, 5],
            mrf_dilations: vec![vec![1, 2], vec![1]],
            lvc_stages: 1,
            kernel_predictor_channels: 4,
            ..Default::default()
        }
    }

    pub fn hop(&self) -> usize {
        self.upsample_rates.iter().product()
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.channels_initial >> (stage + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(VnetError::config(key, msg));
        if self.hop() != HOP {
            return bad("gen.upsample_rates", format!("product is {}, must equal the hop {HOP}", self.hop()));
        }
        if self.upsample_kernel_sizes.len() != self.upsample_rates.len() {
            return bad("gen.upsample_kernel_sizes", "needs one kernel per upsampling stage".into());
        }
        for (&k, &u) in self.upsample_kernel_sizes.iter().zip(&self.upsample_rates) {
            if k < u || u == 0 {
                return bad("gen.upsample_kernel_sizes", format!("kernel {k} is smaller than its rate {u}"));
            }
        }
        if self.stage_channels(self.upsample_rates.len() - 1) == 0 {
            return bad(
                "gen.channels_initial",
                format!("{} channels cannot be halved over {} stages", self.channels_initial, self.upsample_rates.len()),
            );
        }
        if self.mrf_kernel_sizes.is_empty() || self.mrf_kernel_sizes.len() != self.mrf_dilations.len() {
            return bad("gen.mrf_dilations", "needs one dilation list per MRF kernel".into());
        }
        if self.mrf_kernel_sizes.iter().any(|k| k % 2 == 0) || self.mrf_dilations.iter().flatten().any(|&d| d == 0) {
            return bad("gen.mrf_kernel_sizes", "MRF kernels must be odd and dilations >= 1".into());
        }
        if self.mrf_dilations.iter().any(|d| d.is_empty()) {
            return bad("gen.mrf_dilations", "every MRF kernel needs at least one dilation".into());
        }
        if self.lvc_enabled {
            if self.lvc_stages > self.upsample_rates.len() {
                return bad("gen.lvc_stages", format!("only {} stages exist", self.upsample_rates.len()));
            }
            if self.lvc_kernel_size.is_multiple_of(2) {
                return bad("gen.lvc_kernel_size", "must be odd".into());
            }
            if self.lvc_layers_per_block == 0 || self.kernel_predictor_channels == 0 {
                return bad("gen.lvc_layers_per_block", "LVC needs at least one layer and predictor channel".into());
            }
        }
        if self.n_mels == 0 {
            return bad("gen.n_mels", "must be positive".into());
        }
        Ok(())
    }

    fn lvc_blocks(&self) -> usize {
        if self.lvc_enabled {
            self.lvc_stages
        } else {
            0
        }
    }
}

/// Residual stack of one MRF branch: per dilation, activation, dilated
/// conv, activation, conv, added to the skip path.
struct ResStack<F: Element> {
    dilated: Vec<Conv1d<F>>,
    plain: Vec<Conv1d<F>>,
}

impl<F: Element> ResStack<F> {
    fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut h = x.clone();
        for (c1, c2) in self.dilated.iter().zip(&self.plain) {
            let t = c1.forward(&h.leaky_relu(LRELU_SLOPE))?;
            let t = c2.forward(&t.leaky_relu(LRELU_SLOPE))?;
            h = h.add(&t)?;
        }
        Ok(h)
    }
}

/// Multi-receptive-field fusion: mean of parallel residual stacks.
pub struct Mrf<F: Element> {
    stacks: Vec<ResStack<F>>,
}

impl<F: Element> Mrf<F> {
    pub fn new(name: &str, channels: usize, kernels: &[usize], dilations: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut stacks = Vec::new();
        for (j, (&k, dils)) in kernels.iter().zip(dilations).enumerate() {
            let mut dilated = Vec::new();
            let mut plain = Vec::new();
            for (i, &d) in dils.iter().enumerate() {
                let base = format!("{name}.res{j}");
                dilated.push(Conv1d::new(
                    &format!("{base}.conv1_{i}"),
                    ParamGroup::Theta,
                    channels,
                    channels,
                    k,
                    Conv1dOpts::same(k, d, PadMode::Reflect),
                    Norm::Plain,
                    rng,
                )?);
                plain.push(Conv1d::new(
                    &format!("{base}.conv2_{i}"),
                    ParamGroup::Theta,
                    channels,
                    channels,
                    k,
                    Conv1dOpts::same(k, 1, PadMode::Reflect),
                    Norm::Plain,
                    rng,
                )?);
            }
            stacks.push(ResStack { dilated, plain });
        }
        Ok(Mrf { stacks })
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let mut acc: Option<Tensor<F>> = None;
        for s in &self.stacks {
            let y = s.forward(x)?;
            acc = Some(match acc {
                None => y,
                Some(a) => a.add(&y)?,
            });
        }
        let acc = acc.ok_or_else(|| VnetError::config("gen.mrf_kernel_sizes", "empty MRF"))?;
        Ok(acc.scale(1.0 / self.stacks.len() as f64))
    }

    fn convs(&self) -> impl Iterator<Item = &Conv1d<F>> {
        self.stacks.iter().flat_map(|s| s.dilated.iter().chain(&s.plain))
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv1d<F>> {
        self.stacks.iter_mut().flat_map(|s| s.dilated.iter_mut().chain(s.plain.iter_mut()))
    }

    /// Zeroes every weight and bias, leaving the pure skip path.
    pub fn zero(&mut self) -> Result<()> {
        self.convs_mut().try_for_each(|c| c.zero())
    }
}

/// Per-frame kernels and biases of one LVC layer.
pub struct LvcKernels<F: Element> {
    /// `[B, C_out * C_in * K, frames]`
    pub kernels: Tensor<F>,
    /// `[B, C_out, frames]`
    pub bias: Tensor<F>,
}

/// Predicts LVC kernels from the conditioning mel.
pub struct KernelPredictor<F: Element> {
    pre: Conv1d<F>,
    res: Vec<(Conv1d<F>, Conv1d<F>)>,
    kernel_heads: Vec<Vec<Conv1d<F>>>,
    bias_heads: Vec<Vec<Conv1d<F>>>,
}

impl<F: Element> KernelPredictor<F> {
    fn new(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let kp = cfg.kernel_predictor_channels;
        let theta = ParamGroup::Theta;
        let same = |k| Conv1dOpts::same(k, 1, PadMode::Zeros);
        let pre = Conv1d::new("gen.kp.pre", theta, cfg.n_mels, kp, 5, same(5), Norm::Plain, rng)?;
        let mut res = Vec::new();
        for i in 0..2 {
            res.push((
                Conv1d::new(&format!("gen.kp.res{i}.conv1"), theta, kp, kp, 3, same(3), Norm::Plain, rng)?,
                Conv1d::new(&format!("gen.kp.res{i}.conv2"), theta, kp, kp, 3, same(3), Norm::Plain, rng)?,
            ));
        }
        let (mut kernel_heads, mut bias_heads) = (Vec::new(), Vec::new());
        for s in 0..cfg.lvc_blocks() {
            let c = cfg.stage_channels(s);
            let (mut kh, mut bh) = (Vec::new(), Vec::new());
            for l in 0..cfg.lvc_layers_per_block {
                let kout = 2 * c * c * cfg.lvc_kernel_size;
                kh.push(Conv1d::new(&format!("gen.kp.kernel{s}_{l}"), theta, kp, kout, 3, same(3), Norm::Plain, rng)?);
                bh.push(Conv1d::new(&format!("gen.kp.bias{s}_{l}"), theta, kp, 2 * c, 3, same(3), Norm::Plain, rng)?);
            }
            kernel_heads.push(kh);
            bias_heads.push(bh);
        }
        Ok(KernelPredictor {
            pre,
            res,
            kernel_heads,
            bias_heads,
        })
    }

    /// Result is indexed `[block][layer]`.
    pub fn forward(&self, mel: &Tensor<F>) -> Result<Vec<Vec<LvcKernels<F>>>> {
        let mut h = self.pre.forward(mel)?.leaky_relu(LRELU_SLOPE);
        for (c1, c2) in &self.res {
            let t = c2.forward(&c1.forward(&h)?.leaky_relu(LRELU_SLOPE))?;
            h = h.add(&t)?.leaky_relu(LRELU_SLOPE);
        }
        let mut out = Vec::new();
        for (kh, bh) in self.kernel_heads.iter().zip(&self.bias_heads) {
            let mut layers = Vec::new();
            for (k, b) in kh.iter().zip(bh) {
                layers.push(LvcKernels {
                    kernels: k.forward(&h)?,
                    bias: b.forward(&h)?,
                });
            }
            out.push(layers);
        }
        Ok(out)
    }

    fn convs(&self) -> impl Iterator<Item = &Conv1d<F>> {
        std::iter::once(&self.pre)
            .chain(self.res.iter().flat_map(|(a, b)| [a, b]))
            .chain(self.kernel_heads.iter().flatten())
            .chain(self.bias_heads.iter().flatten())
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv1d<F>> {
        std::iter::once(&mut self.pre)
            .chain(self.res.iter_mut().flat_map(|(a, b)| [a, b]))
            .chain(self.kernel_heads.iter_mut().flatten())
            .chain(self.bias_heads.iter_mut().flatten())
    }

    /// Zeroes the kernel and bias heads.
    pub fn zero_heads(&mut self) -> Result<()> {
        self.kernel_heads.iter_mut().chain(self.bias_heads.iter_mut()).flatten().try_for_each(|c| c.zero())
    }
}

/// Location-variable convolution followed by a gated activation unit; the
/// `2C` output channels are split into tanh and sigmoid halves.
pub fn lvc_gated<F: Element>(x: &Tensor<F>, k: &LvcKernels<F>, kernel_size: usize, dilation: usize) -> Result<Tensor<F>> {
    let frames = k.bias.dim(2);
    let bias = k.bias.reshape(&[k.bias.dim(0), k.bias.dim(1), frames])?;
    let y = x.lvc(&k.kernels, &bias, LvcOpts { kernel_size, dilation })?;
    let c = y.dim(1) / 2;
    Ok(y.slice(1, 0, c)?.gated(&y.slice(1, c, 2 * c)?)?)
}

pub struct Generator<F: Element> {
    pub config: GeneratorConfig,
    conv_pre: Conv1d<F>,
    ups: Vec<ConvTranspose1d<F>>,
    mrfs: Vec<Mrf<F>>,
    predictor: Option<KernelPredictor<F>>,
    conv_post: Conv1d<F>,
}

impl<F: Element> Generator<F> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = ParamGroup::Theta;
        let c0 = config.channels_initial;
        let conv_pre = Conv1d::new(
            "gen.conv_pre",
            theta,
            config.n_mels,
            c0,
            7,
            Conv1dOpts::same(7, 1, PadMode::Zeros),
            Norm::Plain,
            &mut rng,
        )?;
        let mut ups = Vec::new();
        let mut mrfs = Vec::new();
        for (s, (&u, &k)) in config.upsample_rates.iter().zip(&config.upsample_kernel_sizes).enumerate() {
            let cin = if s == 0 { c0 } else { config.stage_channels(s - 1) };
            let cout = config.stage_channels(s);
            ups.push(ConvTranspose1d::new(&format!("gen.up{s}"), cin, cout, k, u, (k - u) / 2, &mut rng)?);
            mrfs.push(Mrf::new(
                &format!("gen.mrf{s}"),
                cout,
                &config.mrf_kernel_sizes,
                &config.mrf_dilations,
                &mut rng,
            )?);
        }
        let predictor = if config.lvc_blocks() > 0 {
            Some(KernelPredictor::new(&config, &mut rng)?)
        } else {
            None
        };
        let last = config.stage_channels(config.upsample_rates.len() - 1);
        let conv_post = Conv1d::new(
            "gen.conv_post",
            theta,
            last,
            1,
            7,
            Conv1dOpts::same(7, 1, PadMode::Reflect),
            Norm::Plain,
            &mut rng,
        )?;
        Ok(Generator {
            config,
            conv_pre,
            ups,
            mrfs,
            predictor,
            conv_post,
        })
    }

    /// `[B, n_mels, F]` log-mel to `[B, 1, hop * F]` waveform in `[-1, 1]`.
    pub fn forward(&self, mel: &Tensor<F>) -> Result<Tensor<F>> {
        if mel.rank() != 3 || mel.dim(1) != self.config.n_mels {
            return Err(VnetError::Input(format!(
                "generator expects [B, {}, frames] mel input, got {:?}",
                self.config.n_mels,
                mel.shape()
            )));
        }
        let frames = mel.dim(2);
        if frames == 0 {
            return Err(VnetError::Input("mel input has no frames".into()));
        }
        let kernels = match &self.predictor {
            Some(p) => p.forward(mel)?,
            None => Vec::new(),
        };
        let mut x = self.conv_pre.forward(mel)?;
        let mut len = frames;
        for (s, (up, mrf)) in self.ups.iter().zip(&self.mrfs).enumerate() {
            len *= self.config.upsample_rates[s];
            x = up.forward(&x.leaky_relu(LRELU_SLOPE))?;
            let surplus = x.dim(2) - len;
            if surplus > 0 {
                x = x.slice(2, surplus / 2, surplus / 2 + len)?;
            }
            if let Some(layers) = kernels.get(s) {
                for (l, k) in layers.iter().enumerate() {
                    let dilation = 3usize.pow(l as u32);
                    let g = lvc_gated(&x.leaky_relu(LRELU_SLOPE), k, self.config.lvc_kernel_size, dilation)?;
                    x = x.add(&g)?;
                }
            }
            x = mrf.forward(&x)?;
        }
        Ok(self.conv_post.forward(&x.leaky_relu(LRELU_SLOPE))?.tanh())
    }

    /// Inference on one log-mel spectrogram.
    pub fn generate(&self, mel: &Spectrogram) -> Result<AudioClip> {
        if mel.bins != self.config.n_mels {
            return Err(VnetError::Input(format!(
                "mel has {} bands, the generator expects {}",
                mel.bins, self.config.n_mels
            )));
        }
        let data = mel.values.iter().map(|&v| F::lit(v)).collect();
        let t = Tensor::new(&[1, mel.bins, mel.frames], data)?;
        let wav = no_grad(|| self.forward(&t))?;
        AudioClip::new(wav.data().iter().map(|v| v.as_f64()).collect(), SAMPLE_RATE)
    }

    /// Zero final convolution: the output becomes `tanh(0) = 0`.
    pub fn zero_final_layer(&mut self) -> Result<()> {
        self.conv_post.zero()
    }

    pub fn mrf_mut(&mut self, stage: usize) -> Option<&mut Mrf<F>> {
        self.mrfs.get_mut(stage)
    }

    pub fn predictor_mut(&mut self) -> Option<&mut KernelPredictor<F>> {
        self.predictor.as_mut()
    }

    fn convs(&self) -> Vec<&Conv1d<F>> {
        let mut v = vec![&self.conv_pre];
        v.extend(self.mrfs.iter().flat_map(|m| m.convs()));
        if let Some(p) = &self.predictor {
            v.extend(p.convs());
        }
        v.push(&self.conv_post);
        v
    }
}

impl<F: Element> Module<F> for Generator<F> {
    fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut p: Vec<&Parameter<F>> = self.convs().into_iter().flat_map(|c| c.params()).collect();
        p.extend(self.ups.iter().flat_map(|u| u.params()));
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut p: Vec<&mut Parameter<F>> = self.conv_pre.params_mut();
        for m in &mut self.mrfs {
            p.extend(m.convs_mut().flat_map(|c| c.params_mut()));
        }
        if let Some(kp) = &mut self.predictor {
            p.extend(kp.convs_mut().flat_map(|c| c.params_mut()));
        }
        p.extend(self.conv_post.params_mut());
        p.extend(self.ups.iter_mut().flat_map(|u| u.params_mut()));
        p
    }

    fn buffers(&self) -> Vec<&Buffer<F>> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_mel(frames: usize, seed: u64) -> Tensor<f64> {
        let mut s = seed;
        let data = (0..N_MELS * frames)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 8.0
            })
            .collect();
        Tensor::new(&[1, N_MELS, frames], data).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        let bad = GeneratorConfig {
            upsample_rates: vec![8, 8, 2],
            upsample_kernel_sizes: vec![16, 16, 4],
            ..Default::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("gen.upsample_rates"), "{err}");
    }

    #[test]
    fn mrf_with_zero_weights_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mrf = Mrf::<f64>::new("m", 3, &[3, 5], &[vec![1, 2], vec![1]], &mut rng).unwrap();
        mrf.zero().unwrap();
        let x = Tensor::new(&[1, 3, 10], (0..30).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(mrf.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn mrf_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mrf = Mrf::<f64>::new("m", 2, &[3, 7, 11], &vec![vec![1, 3, 5]; 3], &mut rng).unwrap();
        let x = Tensor::new(&[2, 2, 9], vec![0.1; 36]).unwrap();
        assert_eq!(mrf.forward(&x).unwrap().shape(), &[2, 2, 9]);
    }

    #[test]
    fn tiny_generator_length_and_bounds() {
        let g = Generator::<f64>::new(GeneratorConfig::tiny(), 1).unwrap();
        for frames in [1, 3, 5] {
            let y = g.forward(&random_mel(frames, frames as u64)).unwrap();
            assert_eq!(y.shape(), &[1, 1, 256 * frames]);
            assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn zero_heads_reduce_lvc_to_zero_contribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = GeneratorConfig::tiny();
        let mut kp = KernelPredictor::<f64>::new(&cfg, &mut rng).unwrap();
        kp.zero_heads().unwrap();
        let ks = kp.forward(&random_mel(2, 9)).unwrap();
        assert_eq!(ks.len(), 1);
        assert_eq!(ks[0].len(), cfg.lvc_layers_per_block);
        let c = cfg.stage_channels(0);
        let x = Tensor::new(&[1, c, 16], vec![0.3; c * 16]).unwrap();
        let y = lvc_gated(&x, &ks[0][0], 3, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
