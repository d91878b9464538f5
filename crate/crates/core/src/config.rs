//! Flat `key = value` run configuration.
//!
//! A `preset` line (if any) is applied first, then every other key in file
//! order. Unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use vnet_tensor::optim::AdamConfig;

use crate::discriminators::{DiscriminatorConfig, MtdSubConfig};
use crate::dsp::{StftParams, HOP};
use crate::error::{Result, VnetError};
use crate::generator::GeneratorConfig;
use crate::losses::{FmMode, LossFamily, LossWeights};
use crate::nn::Norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Small,
    Full,
    Tiny,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "small" => Ok(Preset::Small),
            "full" => Ok(Preset::Full),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(format!("unknown preset '{s}' (desk, small, full, tiny)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub data_root: PathBuf,
    pub segment_length: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Steps at the start during which the adversarial weight is zero.
    pub adv_warmup: u64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    /// Max global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    pub out_dir: PathBuf,
    pub precision: Precision,
    pub family: LossFamily,
    pub weights: LossWeights,
    pub fm_mode: FmMode,
    pub adam_g: AdamConfig,
    pub adam_d: AdamConfig,
    /// Per-step multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_root: PathBuf::from("data"),
            segment_length: 8192,
            batch_size: 4,
            steps: 1000,
            seed: 0,
            adv_warmup: 0,
            checkpoint_interval: 500,
            log_interval: 1,
            grad_clip: 0.0,
            out_dir: PathBuf::from("runs/vnet"),
            precision: Precision::F32,
            family: LossFamily::AsymptoticMonotone,
            weights: LossWeights::default(),
            fm_mode: FmMode::Spectrogram,
            adam_g: AdamConfig::default(),
            adam_d: AdamConfig::default(),
            lr_decay: 1.0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| VnetError::config(key, format!("cannot parse '{v}' as a number")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(VnetError::config(key, format!("expected true or false, got '{v}'"))),
    }
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize)> {
    match parse_list(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(VnetError::config(key, format!("expected two comma-separated values, got '{v}'"))),
    }
}

fn parse_norm(key: &str, v: &str) -> Result<Norm> {
    match v {
        "weight" => Ok(Norm::Weight),
        "spectral" => Ok(Norm::Spectral),
        "none" => Ok(Norm::Plain),
        _ => Err(VnetError::config(key, format!("unknown normalization '{v}' (weight, spectral, none)"))),
    }
}

fn norm_name(n: Norm) -> &'static str {
    match n {
        Norm::Weight => "weight",
        Norm::Spectral => "spectral",
        Norm::Plain => "none",
    }
}

fn join<T: ToString>(v: &[T], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl TrainConfig {
    pub fn preset(p: Preset) -> Self {
        let base = TrainConfig::default();
        match p {
            Preset::Desk => base,
            Preset::Full => TrainConfig {
                generator: GeneratorConfig::full(),
                ..base
            },
            Preset::Small => TrainConfig {
                batch_size: 1,
                segment_length: 4096,
                // Few steps on little data: a faster, decaying generator rate.
                adam_g: AdamConfig { lr: 1e-3, ..base.adam_g },
                lr_decay: 0.9995,
                generator: GeneratorConfig::small(),
                discriminator: DiscriminatorConfig::small(),
                ..base
            },
            Preset::Tiny => TrainConfig {
                batch_size: 1,
                segment_length: 1024,
                steps: 10,
                precision: Precision::F64,
                generator: GeneratorConfig::tiny(),
                discriminator: DiscriminatorConfig::tiny(),
                ..base
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VnetError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                VnetError::config(format!("line {}", i + 1), format!("expected key = value, got '{line}'"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            if entries.iter().any(|(_, e, _)| *e == k) {
                return Err(VnetError::config(k, format!("repeated on line {}", i + 1)));
            }
            entries.push((i + 1, k, v));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| *k == "preset") {
            Some((_, k, v)) => TrainConfig::preset(v.parse().map_err(|e: String| VnetError::config(*k, e))?),
            None => TrainConfig::default(),
        };
        for (_, k, v) in entries.iter().filter(|(_, k, _)| *k != "preset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a single key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        let g = &mut self.generator;
        let mtd = &mut self.discriminator.mtd;
        let mpd = &mut self.discriminator.mpd;
        match k {
            "data.root" => self.data_root = PathBuf::from(v),
            "data.segment_length" => self.segment_length = parse_num(k, v)?,
            "data.batch_size" => self.batch_size = parse_num(k, v)?,
            "train.steps" => self.steps = parse_num(k, v)?,
            "train.seed" => self.seed = parse_num(k, v)?,
            "train.adv_warmup" => self.adv_warmup = parse_num(k, v)?,
            "train.checkpoint_interval" => self.checkpoint_interval = parse_num(k, v)?,
            "train.log_interval" => self.log_interval = parse_num(k, v)?,
            "train.grad_clip" => self.grad_clip = parse_num(k, v)?,
            "train.out_dir" => self.out_dir = PathBuf::from(v),
            "train.precision" => {
                self.precision = match v {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => return Err(VnetError::config(k, format!("expected f32 or f64, got '{v}'"))),
                }
            }
            "loss.family" => self.family = v.parse().map_err(|e: String| VnetError::config(k, e))?,
            "loss.fm_mode" => self.fm_mode = v.parse().map_err(|e: String| VnetError::config(k, e))?,
            "loss.lambda_fm" => self.weights.fm = parse_num(k, v)?,
            "loss.lambda_mel" => self.weights.mel = parse_num(k, v)?,
            "loss.lambda_adv" => self.weights.adv = parse_num(k, v)?,
            "optim.lr_g" => self.adam_g.lr = parse_num(k, v)?,
            "optim.lr_d" => self.adam_d.lr = parse_num(k, v)?,
            "optim.beta1" => {
                self.adam_g.beta1 = parse_num(k, v)?;
                self.adam_d.beta1 = self.adam_g.beta1;
            }
            "optim.beta2" => {
                self.adam_g.beta2 = parse_num(k, v)?;
                self.adam_d.beta2 = self.adam_g.beta2;
            }
            "optim.eps" => {
                self.adam_g.eps = parse_num(k, v)?;
                self.adam_d.eps = self.adam_g.eps;
            }
            "optim.lr_decay" => self.lr_decay = parse_num(k, v)?,
            "gen.upsample_rates" => g.upsample_rates = parse_list(k, v)?,
            "gen.upsample_kernel_sizes" => g.upsample_kernel_sizes = parse_list(k, v)?,
            "gen.channels_initial" => g.channels_initial = parse_num(k, v)?,
            "gen.mrf_kernel_sizes" => g.mrf_kernel_sizes = parse_list(k, v)?,
            "gen.mrf_dilations" => g.mrf_dilations = v.split(';').map(|s| parse_list(k, s)).collect::<Result<_>>()?,
            "gen.lvc_enabled" => g.lvc_enabled = parse_bool(k, v)?,
            "gen.lvc_stages" => g.lvc_stages = parse_num(k, v)?,
            "gen.lvc_layers_per_block" => g.lvc_layers_per_block = parse_num(k, v)?,
            "gen.lvc_kernel_size" => g.lvc_kernel_size = parse_num(k, v)?,
            "gen.kernel_predictor_channels" => g.kernel_predictor_channels = parse_num(k, v)?,
            "mtd.channels" => mtd.channels = parse_num(k, v)?,
            "mtd.kernel" => mtd.kernel = parse_pair(k, v)?,
            "mtd.final_kernel" => mtd.final_kernel = parse_pair(k, v)?,
            "mtd.time_stride" => mtd.time_stride = parse_num(k, v)?,
            "mtd.dilations" => mtd.dilations = parse_list(k, v)?,
            "mtd.pools" | "mtd.stft" | "mtd.norms" => {
                let parts: Vec<&str> = v.split(';').map(str::trim).collect();
                if parts.len() != mtd.subs.len() {
                    *mtd = crate::discriminators::MtdConfig {
                        subs: vec![mtd.subs[0]; parts.len()],
                        ..mtd.clone()
                    };
                }
                for (sub, p) in mtd.subs.iter_mut().zip(parts) {
                    match k {
                        "mtd.pools" => sub.pool = parse_num(k, p)?,
                        "mtd.norms" => sub.norm = parse_norm(k, p)?,
                        _ => {
                            let l = parse_list(k, p)?;
                            let [n, h, w] = l[..] else {
                                return Err(VnetError::config(k, format!("expected n_fft,hop,win, got '{p}'")));
                            };
                            sub.stft = StftParams::new(n, h, w);
                        }
                    }
                }
            }
            "mpd.periods" => mpd.periods = parse_list(k, v)?,
            "mpd.channels" => mpd.channels = parse_list(k, v)?,
            "mpd.kernel" => mpd.kernel = parse_num(k, v)?,
            "mpd.stride" => mpd.stride = parse_num(k, v)?,
            "mpd.final_kernel" => mpd.final_kernel = parse_num(k, v)?,
            _ => return Err(VnetError::config(k, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_length == 0 || !self.segment_length.is_multiple_of(HOP) {
            return Err(VnetError::config(
                "data.segment_length",
                format!("{} is not a positive multiple of {HOP}", self.segment_length),
            ));
        }
        if self.batch_size == 0 {
            return Err(VnetError::config("data.batch_size", "must be positive"));
        }
        if self.log_interval == 0 {
            return Err(VnetError::config("train.log_interval", "must be positive"));
        }
        if self.grad_clip.is_nan() || self.grad_clip < 0.0 {
            return Err(VnetError::config("train.grad_clip", "must be >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(VnetError::config("optim.lr_decay", "must lie in (0, 1]"));
        }
        for (k, a) in [("optim.lr_g", &self.adam_g), ("optim.lr_d", &self.adam_d)] {
            if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
                return Err(VnetError::config(k, "need lr > 0, betas in [0, 1) and eps > 0"));
            }
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        let need = self.discriminator.mtd.min_input_len().max(StftParams::MEL.win_length);
        if self.segment_length < need {
            return Err(VnetError::config(
                "data.segment_length",
                format!("{} samples is shorter than the largest analysis window ({need})", self.segment_length),
            ));
        }
        Ok(())
    }

    /// Canonical text covering every key; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let mtd = &self.discriminator.mtd;
        let mpd = &self.discriminator.mpd;
        let subs = |f: &dyn Fn(&MtdSubConfig) -> String| mtd.subs.iter().map(f).collect::<Vec<_>>().join(";");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("data.root", self.data_root.display().to_string());
        kv("data.segment_length", self.segment_length.to_string());
        kv("data.batch_size", self.batch_size.to_string());
        kv("train.steps", self.steps.to_string());
        kv("train.seed", self.seed.to_string());
        kv("train.adv_warmup", self.adv_warmup.to_string());
        kv("train.checkpoint_interval", self.checkpoint_interval.to_string());
        kv("train.log_interval", self.log_interval.to_string());
        kv("train.grad_clip", self.grad_clip.to_string());
        kv("train.out_dir", self.out_dir.display().to_string());
        kv("train.precision", if self.precision == Precision::F64 { "f64" } else { "f32" }.into());
        kv("loss.family", self.family.to_string());
        kv("loss.fm_mode", self.fm_mode.to_string());
        kv("loss.lambda_fm", self.weights.fm.to_string());
        kv("loss.lambda_mel", self.weights.mel.to_string());
        kv("loss.lambda_adv", self.weights.adv.to_string());
        kv("optim.lr_g", self.adam_g.lr.to_string());
        kv("optim.lr_d", self.adam_d.lr.to_string());
        kv("optim.beta1", self.adam_g.beta1.to_string());
        kv("optim.beta2", self.adam_g.beta2.to_string());
        kv("optim.eps", self.adam_g.eps.to_string());
        kv("optim.lr_decay", self.lr_decay.to_string());
        kv("gen.upsample_rates", join(&g.upsample_rates, ","));
        kv("gen.upsample_kernel_sizes", join(&g.upsample_kernel_sizes, ","));
        kv("gen.channels_initial", g.channels_initial.to_string());
        kv("gen.mrf_kernel_sizes", join(&g.mrf_kernel_sizes, ","));
        kv("gen.mrf_dilations", g.mrf_dilations.iter().map(|d| join(d, ",")).collect::<Vec<_>>().join(";"));
        kv("gen.lvc_enabled", g.lvc_enabled.to_string());
        kv("gen.lvc_stages", g.lvc_stages.to_string());
        kv("gen.lvc_layers_per_block", g.lvc_layers_per_block.to_string());
        kv("gen.lvc_kernel_size", g.lvc_kernel_size.to_string());
        kv("gen.kernel_predictor_channels", g.kernel_predictor_channels.to_string());
        kv("mtd.channels", mtd.channels.to_string());
        kv("mtd.kernel", format!("{},{}", mtd.kernel.0, mtd.kernel.1));
        kv("mtd.final_kernel", format!("{},{}", mtd.final_kernel.0, mtd.final_kernel.1));
        kv("mtd.time_stride", mtd.time_stride.to_string());
        kv("mtd.dilations", join(&mtd.dilations, ","));
        kv("mtd.pools", subs(&|s| s.pool.to_string()));
        kv("mtd.stft", subs(&|s| format!("{},{},{}", s.stft.n_fft, s.stft.hop_length, s.stft.win_length)));
        kv("mtd.norms", subs(&|s| norm_name(s.norm).to_string()));
        kv("mpd.periods", join(&mpd.periods, ","));
        kv("mpd.channels", join(&mpd.channels, ","));
        kv("mpd.kernel", mpd.kernel.to_string());
        kv("mpd.stride", mpd.stride.to_string());
        kv("mpd.final_kernel", mpd.final_kernel.to_string());
        s
    }

    /// Multiplier applied to the adversarial weight at 0-based `step`.
    pub fn adv_scale(&self, step: u64) -> f64 {
        if step < self.adv_warmup {
            0.0
        } else {
            1.0
        }
    }
}
