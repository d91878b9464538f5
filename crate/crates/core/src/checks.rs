//! Finite-difference gradient checks in 64-bit mode: tensor ops, the
//! generator with its log-spectral loss, both discriminator families and each
//! adversarial loss family.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnet_tensor::gradcheck::{grad_check, relative_error, GradCheckOptions};
use vnet_tensor::ops::stft::StftGeometry;
use vnet_tensor::{
    backward, no_grad, BackwardOp, Conv1dOpts, Conv2dOpts, LvcOpts, Module, PadMode, ParamGroup, Tensor, TensorError,
};

use crate::discriminators::{avg_pool_tensor, DiscriminatorConfig, Discriminators, Mpd};
use crate::error::{Result, VnetError};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{
    adv_loss_discriminator, adv_loss_generator, feature_loss, feature_matching_loss, mel_spectrogram_loss,
    split_terms, LossFamily,
};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Coordinates probed per parameter tensor in the model checks.
const COORDS_PER_PARAM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum CheckGroup {
    Ops,
    Generator,
    Mtd,
    Mpd,
    Losses,
}

impl CheckGroup {
    pub const ALL: [CheckGroup; 5] = [
        CheckGroup::Ops,
        CheckGroup::Generator,
        CheckGroup::Mtd,
        CheckGroup::Mpd,
        CheckGroup::Losses,
    ];
}

impl fmt::Display for CheckGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckGroup::Ops => "ops",
            CheckGroup::Generator => "generator",
            CheckGroup::Mtd => "mtd",
            CheckGroup::Mpd => "mpd",
            CheckGroup::Losses => "losses",
        })
    }
}

impl FromStr for CheckGroup {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        CheckGroup::ALL
            .into_iter()
            .find(|g| g.to_string() == s)
            .ok_or_else(|| format!("unknown check group '{s}' (ops, generator, mtd, mpd, losses)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub group: CheckGroup,
    pub name: String,
    pub max_rel_error: f64,
    pub coords: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= TOLERANCE
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.3e}\t{}\t{}",
            self.group,
            self.name,
            self.max_rel_error,
            self.coords,
            if self.passed() { "ok" } else { "FAIL" }
        )
    }
}

pub fn run_group(group: CheckGroup) -> Result<Vec<CheckResult>> {
    match group {
        CheckGroup::Ops => op_checks(),
        CheckGroup::Generator => generator_checks(),
        CheckGroup::Mtd => discriminator_checks(CheckGroup::Mtd),
        CheckGroup::Mpd => discriminator_checks(CheckGroup::Mpd),
        CheckGroup::Losses => loss_checks(),
    }
}

pub fn run(groups: &[CheckGroup]) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for &g in groups {
        out.extend(run_group(g)?);
    }
    Ok(out)
}

/// Model errors inside closures handed to the tensor-level checker.
fn te(e: VnetError) -> TensorError {
    match e {
        VnetError::Tensor(t) => t,
        other => TensorError::Usage(other.to_string()),
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape")
}

/// Checks `sum(f(x) * r)` for a fixed random `r`, so every output matters.
fn probe(
    group: CheckGroup,
    name: &str,
    point: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> vnet_tensor::Result<Tensor<f64>>,
) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = no_grad(|| f(point))?.shape().to_vec();
    let r = rand_tensor(&mut rng, &shape, 1.0);
    let report = grad_check(|x| f(x)?.mul(&r).map(|t| t.sum()), point, GradCheckOptions::default())?;
    Ok(CheckResult {
        group,
        name: name.to_string(),
        max_rel_error: report.max_rel_error,
        coords: report.coords_checked,
    })
}

/// Doubles its input but reports the identity as its derivative.
struct CorruptedDouble;

impl BackwardOp<f64> for CorruptedDouble {
    fn name(&self) -> &'static str {
        "corrupted_double"
    }

    fn backward(&self, _inputs: &[Tensor<f64>], _output: &[f64], grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.to_vec())]
    }
}

/// An op with a deliberately wrong backward rule; its check must fail.
pub fn corrupted_check() -> Result<CheckResult> {
    let x = Tensor::new(&[4], vec![0.3, -0.7, 1.1, 0.2])?;
    probe(CheckGroup::Ops, "corrupted_double", &x, |x| {
        let y = x.data().iter().map(|v| 2.0 * v).collect();
        Ok(Tensor::from_op(x.shape().to_vec(), y, vec![x.clone()], CorruptedDouble))
    })
}

fn op_checks() -> Result<Vec<CheckResult>> {
    use CheckGroup::Ops;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();

    // Away from the kinks of leaky_relu, abs and clamp_min.
    let x = Tensor::new(&[6], vec![0.8, -0.6, 1.7, -1.1, 0.35, -2.4])?;
    let pos = Tensor::new(&[6], vec![0.8, 0.6, 1.7, 1.1, 0.35, 2.4])?;
    let y = rand_tensor(&mut rng, &[6], 1.0);
    out.push(probe(Ops, "add", &x, |x| x.add(&y))?);
    out.push(probe(Ops, "sub", &x, |x| y.sub(x))?);
    out.push(probe(Ops, "mul", &x, |x| x.mul(&y))?);
    out.push(probe(Ops, "div", &pos, |p| y.div(p))?);
    out.push(probe(Ops, "neg_scale_shift", &x, |x| Ok(x.neg().scale(1.5).add_scalar(0.2)))?);
    out.push(probe(Ops, "square", &x, |x| Ok(x.square()))?);
    out.push(probe(Ops, "sqrt", &pos, |x| Ok(x.sqrt()))?);
    out.push(probe(Ops, "exp", &x, |x| Ok(x.exp()))?);
    out.push(probe(Ops, "ln", &pos, |x| Ok(x.ln()))?);
    out.push(probe(Ops, "tanh", &x, |x| Ok(x.tanh()))?);
    out.push(probe(Ops, "sigmoid", &x, |x| Ok(x.sigmoid()))?);
    out.push(probe(Ops, "abs", &x, |x| Ok(x.abs()))?);
    out.push(probe(Ops, "leaky_relu", &x, |x| Ok(x.leaky_relu(0.1)))?);
    out.push(probe(Ops, "clamp_min", &pos, |x| Ok(x.clamp_min(0.5)))?);
    out.push(probe(Ops, "gated", &x, |x| x.gated(&y))?);

    let t = rand_tensor(&mut rng, &[2, 3, 5], 1.0);
    let bias = rand_tensor(&mut rng, &[3], 1.0);
    out.push(probe(Ops, "reshape", &t, |x| x.reshape(&[6, 5]))?);
    out.push(probe(Ops, "slice", &t, |x| x.slice(2, 1, 4))?);
    out.push(probe(Ops, "concat", &t, |x| Tensor::concat(&[x.clone(), x.slice(1, 0, 1)?], 1))?);
    out.push(probe(Ops, "pad_reflect", &t, |x| x.pad_last(3, 4, PadMode::Reflect))?);
    out.push(probe(Ops, "pad_zeros", &t, |x| x.pad_last(1, 2, PadMode::Zeros))?);
    out.push(probe(Ops, "add_bias", &bias, |b| t.add_bias(b))?);
    out.push(probe(Ops, "sum", &t, |x| Ok(x.sum()))?);
    out.push(probe(Ops, "mean", &t, |x| Ok(x.mean()))?);
    out.push(probe(Ops, "sum_last", &t, |x| Ok(x.sum_last()))?);
    out.push(probe(Ops, "norm_last", &t, |x| Ok(x.norm_last()))?);

    let w = rand_tensor(&mut rng, &[4, 2, 3], 0.5);
    let sig = rand_tensor(&mut rng, &[2, 4, 11], 1.0);
    let c1 = Conv1dOpts {
        stride: 2,
        padding: 2,
        dilation: 2,
        groups: 2,
        mode: PadMode::Reflect,
    };
    out.push(probe(Ops, "conv1d/input", &sig, |x| x.conv1d(&w, c1))?);
    out.push(probe(Ops, "conv1d/weight", &w, |w| sig.conv1d(w, c1))?);

    let wt = rand_tensor(&mut rng, &[3, 2, 4], 0.5);
    let st = rand_tensor(&mut rng, &[1, 3, 5], 1.0);
    out.push(probe(Ops, "conv_transpose1d/input", &st, |x| x.conv_transpose1d(&wt, 2, 1))?);
    out.push(probe(Ops, "conv_transpose1d/weight", &wt, |w| st.conv_transpose1d(w, 2, 1))?);

    let w2 = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5);
    let s2 = rand_tensor(&mut rng, &[1, 2, 6, 9], 1.0);
    let c2 = Conv2dOpts {
        stride: (1, 2),
        padding: (1, 2),
        dilation: (1, 2),
    };
    out.push(probe(Ops, "conv2d/input", &s2, |x| x.conv2d(&w2, c2))?);
    out.push(probe(Ops, "conv2d/weight", &w2, |w| s2.conv2d(w, c2))?);

    let mut u = vec![1.0; 3];
    let (_, sigma) = w2.spectral_norm(&mut u, 20)?;
    out.push(probe(Ops, "spectral_norm_conv2d", &w2, |w| s2.conv2d(&w.scale_by_sigma(sigma), c2))?);
    let g = Tensor::new(&[4], vec![0.7, -1.3, 2.0, 0.4])?;
    out.push(probe(Ops, "weight_norm/direction", &w, |v| v.weight_norm(&g))?);
    out.push(probe(Ops, "weight_norm/gain", &g, |g| w.weight_norm(g))?);

    let (cin, cout, k, frames, hop) = (2, 3, 3, 3, 4);
    let xs = rand_tensor(&mut rng, &[1, cin, frames * hop], 1.0);
    let kern = rand_tensor(&mut rng, &[1, cout * cin * k, frames], 0.5);
    let kb = rand_tensor(&mut rng, &[1, cout, frames], 0.5);
    let lo = LvcOpts {
        kernel_size: k,
        dilation: 2,
    };
    out.push(probe(Ops, "lvc/input", &xs, |x| x.lvc(&kern, &kb, lo))?);
    out.push(probe(Ops, "lvc/kernels", &kern, |kv| xs.lvc(kv, &kb, lo))?);
    out.push(probe(Ops, "lvc/bias", &kb, |b| xs.lvc(&kern, b, lo))?);

    let wave = rand_tensor(&mut rng, &[2, 40], 1.0);
    let geom = StftGeometry {
        n_fft: 16,
        hop: 4,
        win: 12,
    };
    out.push(probe(Ops, "stft_magnitude", &wave, |x| x.stft_magnitude(geom, 1e-9))?);
    out.push(probe(Ops, "avg_pool", &wave, |x| avg_pool_tensor(x, 4).map_err(te))?);
    out.push(probe(Ops, "reshape2d", &wave, |x| Mpd::reshape2d(x, 3).map_err(te))?);
    Ok(out)
}

fn check_params<M: Module<f64>>(
    group: CheckGroup,
    label: &str,
    module: &mut M,
    loss: impl Fn(&M) -> Result<Tensor<f64>>,
) -> Result<Vec<CheckResult>> {
    check_params_split(group, label, module, &loss, |m, _| loss(m))
}

/// Central differences at the largest-gradient coordinates of every
/// parameter, reported per layer (the first two components of the name).
///
/// Model losses sum many terms, so central differences have a roundoff floor
/// near `1e-16 |L| / eps`; coordinates whose derivative is far below it
/// cannot be resolved to the tolerance. A missing or misplaced gradient
/// still shows up at the chosen coordinates, where the numeric derivative
/// disagrees.
///
/// The analytic gradient comes from `loss`; the numeric derivative of each
/// parameter from `numeric(module, its group)`. They differ for objectives
/// with stop-gradients, where each group only sees part of the loss.
fn check_params_split<M: Module<f64>>(
    group: CheckGroup,
    label: &str,
    module: &mut M,
    loss: impl Fn(&M) -> Result<Tensor<f64>>,
    numeric: impl Fn(&M, ParamGroup) -> Result<Tensor<f64>>,
) -> Result<Vec<CheckResult>> {
    let eps = GradCheckOptions::default().eps;
    module.zero_grad();
    backward(&loss(module)?)?;
    let grads: Vec<(String, ParamGroup, Vec<f64>)> = module
        .parameters()
        .iter()
        .map(|p| {
            let g = p.grad().unwrap_or_else(|| vec![0.0; p.data().len()]);
            (p.name().to_string(), p.group(), g)
        })
        .collect();
    module.zero_grad();
    let mut layers: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (pi, (name, pgroup, grad)) in grads.iter().enumerate() {
        let n = grad.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
        let base = module.parameters()[pi].data().to_vec();
        for &i in order.iter().take(COORDS_PER_PARAM) {
            let mut eval = |delta: f64| -> Result<f64> {
                let mut data = base.clone();
                data[i] += delta;
                module.parameters_mut()[pi].set_data(data)?;
                Ok(no_grad(|| numeric(module, *pgroup))?.item())
            };
            let fd = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            module.parameters_mut()[pi].set_data(base.clone())?;
            let err = relative_error(grad[i], fd);
            let layer = name.split('.').take(2).collect::<Vec<_>>().join(".");
            let e = layers.entry(layer).or_insert((0.0, 0));
            e.0 = e.0.max(err);
            e.1 += 1;
        }
    }
    Ok(layers
        .into_iter()
        .map(|(layer, (err, coords))| CheckResult {
            group,
            name: format!("{label}/{layer}"),
            max_rel_error: err,
            coords,
        })
        .collect())
}

fn tiny_disc() -> Result<Discriminators<f64>> {
    let mut d = Discriminators::new(DiscriminatorConfig::tiny(), 11)?;
    // The power-iteration estimate is a constant of the backward pass; keep
    // it fixed while probing.
    d.set_sigma_update(false);
    Ok(d)
}

fn waveform(rng: &mut ChaCha8Rng, len: usize) -> Tensor<f64> {
    let v = (0..len)
        .map(|i| 0.4 * (i as f64 * 0.21).sin() + 0.2 * (i as f64 * 0.037).sin() + rng.random_range(-0.1..0.1))
        .collect();
    Tensor::new(&[1, 1, len], v).expect("shape")
}

fn generator_checks() -> Result<Vec<CheckResult>> {
    let cfg = GeneratorConfig::tiny();
    let frames = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mel = rand_tensor(&mut rng, &[1, cfg.n_mels, frames], 1.0).add_scalar(-3.0);
    let disc = tiny_disc()?;
    let target = waveform(&mut rng, frames * cfg.hop());
    let real_specs = no_grad(|| disc.mtd.spectrograms(&target))?;
    let mut gen = Generator::new(cfg, 3)?;
    let l_mel = |g: &Generator<f64>, mel: &Tensor<f64>| -> Result<Tensor<f64>> {
        let fake = g.forward(mel)?;
        mel_spectrogram_loss(&real_specs, &disc.mtd.spectrograms(&fake)?)
    };
    let mut out = check_params(CheckGroup::Generator, "generator+l_mel", &mut gen, |g| l_mel(g, &mel))?;
    gen.set_requires_grad(false);
    let report = grad_check(
        |m| l_mel(&gen, m).map_err(te),
        &mel,
        GradCheckOptions {
            max_coords: Some(24),
            ..Default::default()
        },
    )?;
    out.push(CheckResult {
        group: CheckGroup::Generator,
        name: "generator+l_mel/mel_input".into(),
        max_rel_error: report.max_rel_error,
        coords: report.coords_checked,
    });
    Ok(out)
}

fn discriminator_checks(group: CheckGroup) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut disc = tiny_disc()?;
    let len = 512;
    let x = waveform(&mut rng, len);
    let outputs = |d: &Discriminators<f64>, x: &Tensor<f64>| -> Result<Vec<crate::discriminators::DiscriminatorOutput<f64>>> {
        match group {
            CheckGroup::Mtd => d.mtd.forward(x),
            _ => d.mpd.forward(x),
        }
    };
    // Fixed random projections of every score map and hidden activation.
    let probe_out = no_grad(|| outputs(&disc, &x))?;
    let weights: Vec<Vec<Tensor<f64>>> = probe_out
        .iter()
        .map(|o| o.features.iter().map(|f| rand_tensor(&mut rng, f.shape(), 1.0)).collect())
        .collect();
    let objective = |d: &Discriminators<f64>, x: &Tensor<f64>| -> Result<Tensor<f64>> {
        let mut acc = Tensor::scalar(0.0);
        for (o, ws) in outputs(d, x)?.iter().zip(&weights) {
            for (f, w) in o.features.iter().zip(ws) {
                acc = acc.add(&f.mul(w)?.mean())?;
            }
        }
        Ok(acc)
    };
    let mut out = check_params(group, &format!("{group}/features"), &mut disc, |d| objective(d, &x))?;
    // Layers of the other family receive no gradient; drop their rows.
    let prefix = if group == CheckGroup::Mtd { "/mtd" } else { "/mpd" };
    out.retain(|r| r.name.contains(prefix));
    disc.set_requires_grad(false);
    let report = grad_check(
        |w| objective(&disc, w).map_err(te),
        &x,
        GradCheckOptions {
            max_coords: Some(32),
            ..Default::default()
        },
    )?;
    out.push(CheckResult {
        group,
        name: format!("{group}/features/waveform"),
        max_rel_error: report.max_rel_error,
        coords: report.coords_checked,
    });
    Ok(out)
}

fn loss_checks() -> Result<Vec<CheckResult>> {
    use CheckGroup::Losses;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut out = Vec::new();
    let len = 512;
    let real = waveform(&mut rng, len);
    // Broadband and clearly unlike `real`: every spectrogram bin is well
    // above the magnitude guard and real/fake score statistics differ.
    let fake = Tensor::new(&[1, 1, len], (0..len).map(|_| rng.random_range(-0.8..0.8)).collect())?;
    let mut disc = tiny_disc()?;
    let real_specs = no_grad(|| disc.mtd.spectrograms(&real))?;
    let real_out = no_grad(|| disc.forward_with_spectrograms(&real, &real_specs))?;
    let wave_opts = GradCheckOptions {
        max_coords: Some(32),
        ..Default::default()
    };

    // Scalar R functions over a grid.
    let grid = Tensor::new(&[9], (0..9).map(|i| -2.0 + 0.5 * i as f64 + 0.01).collect())?;
    for family in LossFamily::ALL {
        out.push(probe(Losses, &format!("{family}/r1"), &grid, |z| Ok(family.r1(z)))?);
        out.push(probe(Losses, &format!("{family}/r2"), &grid, |z| Ok(family.r2(z)))?);
        out.push(probe(Losses, &format!("{family}/r3"), &grid, |z| Ok(family.r3(z)))?);
    }

    let specs_of = |d: &Discriminators<f64>, w: &Tensor<f64>| d.mtd.spectrograms(w);
    let report = grad_check(
        |w| feature_matching_loss(&real_specs, &specs_of(&disc, w).map_err(te)?).map_err(te),
        &fake,
        wave_opts,
    )?;
    out.push(result(Losses, "l_fm/spectrogram", report));
    let report = grad_check(
        |w| mel_spectrogram_loss(&real_specs, &specs_of(&disc, w).map_err(te)?).map_err(te),
        &fake,
        wave_opts,
    )?;
    out.push(result(Losses, "l_mel", report));

    disc.set_requires_grad(false);
    let report = grad_check(
        |w| feature_loss(&real_out, &disc.forward(w).map_err(te)?).map_err(te),
        &fake,
        wave_opts,
    )?;
    out.push(result(Losses, "l_fm/features", report));
    for family in LossFamily::ALL {
        let report = grad_check(
            |w| adv_loss_generator(family, &disc.forward(w).map_err(te)?).map_err(te),
            &fake,
            wave_opts,
        )?;
        out.push(result(Losses, &format!("{family}/l_adv_g"), report));
    }
    disc.set_requires_grad(true);

    let fake_c = fake.detach();
    for family in LossFamily::ALL {
        let outs = |d: &Discriminators<f64>| -> Result<_> { Ok((d.forward(&real)?, d.forward(&fake_c)?)) };
        let d_loss = |d: &Discriminators<f64>| -> Result<Tensor<f64>> {
            let (r, f) = outs(d)?;
            adv_loss_discriminator(family, &r, &f, family.uses_split())
        };
        // With the split objective, phi only sees the R1/R2 terms and omega
        // only the R3 terms.
        let per_group = |d: &Discriminators<f64>, g: ParamGroup| -> Result<Tensor<f64>> {
            if !family.uses_split() {
                return d_loss(d);
            }
            let (r, f) = outs(d)?;
            let (phi, omega) = split_terms(family, &r, &f)?;
            Ok(if g == ParamGroup::Omega { omega } else { phi })
        };
        let rows = check_params_split(Losses, &format!("{family}/l_adv_d"), &mut disc, d_loss, per_group)?;
        let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        out.push(CheckResult {
            group: Losses,
            name: format!("{family}/l_adv_d/params"),
            max_rel_error: worst,
            coords: rows.iter().map(|r| r.coords).sum(),
        });
    }
    Ok(out)
}

fn result(group: CheckGroup, name: &str, r: vnet_tensor::gradcheck::GradCheckReport) -> CheckResult {
    CheckResult {
        group,
        name: name.to_string(),
        max_rel_error: r.max_rel_error,
        coords: r.coords_checked,
    }
}
