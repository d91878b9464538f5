//! Training objectives: spectrogram feature matching, log-spectral distance
//! and the adversarial families.

use std::fmt;
use std::str::FromStr;

use vnet_tensor::{Element, Tensor};

use crate::discriminators::DiscriminatorOutput;
use crate::error::{Result, VnetError};

pub const LOG_FLOOR: f64 = 1e-5;
/// Below this reference norm a relative-distance term contributes nothing.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFamily {
    Lsgan,
    /// Constraint `sigma(x) = exp(-(0.3x - 2))` exactly as written.
    AsymptoticPrinted,
    /// Sign-flipped constraint `sigma(x) = exp(0.3x - 2)`, whose `R3` is decreasing.
    AsymptoticMonotone,
}

impl LossFamily {
    pub const ALL: [LossFamily; 3] = [LossFamily::Lsgan, LossFamily::AsymptoticPrinted, LossFamily::AsymptoticMonotone];

    /// Whether the discriminator loss uses the four-term split objective.
    pub fn uses_split(self) -> bool {
        self != LossFamily::Lsgan
    }

    /// `ln sigma(x)`; `None` for the least-squares family.
    fn log_sigma_coeffs(self) -> Option<(f64, f64)> {
        match self {
            LossFamily::Lsgan => None,
            LossFamily::AsymptoticPrinted => Some((-0.3, 2.0)),
            LossFamily::AsymptoticMonotone => Some((0.3, -2.0)),
        }
    }

    /// `sigma(y)^2 = exp(2 ln sigma(y))` for `y = offset + sign * z`.
    fn sigma_sq<F: Element>(self, z: &Tensor<F>, offset: f64, sign: f64) -> Tensor<F> {
        let (a, b) = self.log_sigma_coeffs().expect("asymptotic family");
        z.scale(2.0 * a * sign).add_scalar(2.0 * (a * offset + b)).exp()
    }

    pub fn r1<F: Element>(self, z: &Tensor<F>) -> Tensor<F> {
        match self {
            LossFamily::Lsgan => z.neg().add_scalar(1.0).square().neg(),
            _ => self.sigma_sq(z, 1.0, -1.0).neg(),
        }
    }

    pub fn r2<F: Element>(self, z: &Tensor<F>) -> Tensor<F> {
        match self {
            LossFamily::Lsgan => z.square().neg(),
            _ => self.sigma_sq(z, 0.0, 1.0).neg(),
        }
    }

    pub fn r3<F: Element>(self, z: &Tensor<F>) -> Tensor<F> {
        match self {
            LossFamily::Lsgan => z.neg().add_scalar(1.0).square(),
            _ => self.sigma_sq(z, 1.0, -1.0),
        }
    }

    /// `(R1(z), R2(z), R3(z))` on a plain scalar.
    pub fn r_scalar(self, z: f64) -> (f64, f64, f64) {
        let t = Tensor::<f64>::scalar(z);
        (self.r1(&t).item(), self.r2(&t).item(), self.r3(&t).item())
    }

    pub fn sigma(self, x: f64) -> Option<f64> {
        self.log_sigma_coeffs().map(|(a, b)| (a * x + b).exp())
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossFamily::Lsgan => "lsgan",
            LossFamily::AsymptoticPrinted => "asymptotic_printed",
            LossFamily::AsymptoticMonotone => "asymptotic_monotone",
        })
    }
}

impl FromStr for LossFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LossFamily::ALL
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| format!("unknown loss family '{s}' (lsgan, asymptotic_printed, asymptotic_monotone)"))
    }
}

/// Which representation the feature-matching term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmMode {
    /// Relative Frobenius distance of the tier spectrograms.
    Spectrogram,
    /// Mean absolute distance of discriminator intermediate features.
    Features,
}

impl fmt::Display for FmMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FmMode::Spectrogram => "spectrogram",
            FmMode::Features => "features",
        })
    }
}

impl FromStr for FmMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spectrogram" => Ok(FmMode::Spectrogram),
            "features" => Ok(FmMode::Features),
            _ => Err(format!("unknown feature-matching mode '{s}' (spectrogram, features)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub fm: f64,
    pub mel: f64,
    pub adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { fm: 2.0, mel: 45.0, adv: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [("loss.lambda_fm", self.fm), ("loss.lambda_mel", self.mel), ("loss.lambda_adv", self.adv)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(VnetError::config(k, format!("weight must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_fm: f64,
    pub l_mel: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub const FIELDS: [&'static str; 6] = ["l_fm", "l_mel", "l_adv_g", "l_adv_d", "total_g", "total_d"];

    pub fn values(&self) -> [f64; 6] {
        [self.l_fm, self.l_mel, self.l_adv_g, self.l_adv_d, self.total_g, self.total_d]
    }

    /// Fails with the name of the first non-finite field.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, v) in Self::FIELDS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(VnetError::NonFinite(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

fn check_pairs<F: Element>(real: &[Tensor<F>], fake: &[Tensor<F>], what: &str) -> Result<()> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(VnetError::Input(format!("{what}: {} real vs {} generated spectrograms", real.len(), fake.len())));
    }
    for (r, f) in real.iter().zip(fake) {
        if r.shape() != f.shape() {
            return Err(VnetError::Input(format!(
                "{what}: shape {:?} vs {:?} (signal lengths differ)",
                r.shape(),
                f.shape()
            )));
        }
    }
    Ok(())
}

fn per_item<F: Element>(s: &Tensor<F>) -> Result<Tensor<F>> {
    let b = s.dim(0);
    Ok(s.reshape(&[b, s.numel() / b.max(1)])?)
}

/// Mean over tiers and batch items of `||S - S^|| / ||S||`.
pub fn feature_matching_loss<F: Element>(real: &[Tensor<F>], fake: &[Tensor<F>]) -> Result<Tensor<F>> {
    check_pairs(real, fake, "feature matching")?;
    let mut acc = Tensor::scalar(F::zero());
    for (r, f) in real.iter().zip(fake) {
        let r = per_item(r)?;
        let diff = per_item(f)?.sub(&r)?.norm_last();
        let inv: Vec<F> = r
            .detach()
            .norm_last()
            .data()
            .iter()
            .map(|&n| if n.as_f64() < NORM_GUARD { F::zero() } else { F::one() / n })
            .collect();
        let inv = Tensor::new(&[inv.len()], inv)?;
        acc = acc.add(&diff.mul(&inv)?.mean())?;
    }
    Ok(acc.scale(1.0 / real.len() as f64))
}

/// Mean over tiers of the mean absolute log-magnitude difference.
pub fn mel_spectrogram_loss<F: Element>(real: &[Tensor<F>], fake: &[Tensor<F>]) -> Result<Tensor<F>> {
    check_pairs(real, fake, "log-spectral loss")?;
    let mut acc = Tensor::scalar(F::zero());
    for (r, f) in real.iter().zip(fake) {
        let lr = r.clamp_min(LOG_FLOOR).ln();
        let lf = f.clamp_min(LOG_FLOOR).ln();
        acc = acc.add(&lf.sub(&lr)?.abs().mean())?;
    }
    Ok(acc.scale(1.0 / real.len() as f64))
}

/// Mean absolute distance between discriminator features, averaged over maps.
pub fn feature_loss<F: Element>(real: &[DiscriminatorOutput<F>], fake: &[DiscriminatorOutput<F>]) -> Result<Tensor<F>> {
    let r: Vec<Tensor<F>> = real.iter().flat_map(|o| o.features.iter().map(|t| t.detach())).collect();
    let f: Vec<Tensor<F>> = fake.iter().flat_map(|o| o.features.iter().cloned()).collect();
    check_pairs(&r, &f, "feature loss")?;
    let mut acc = Tensor::scalar(F::zero());
    for (a, b) in r.iter().zip(&f) {
        acc = acc.add(&b.sub(a)?.abs().mean())?;
    }
    Ok(acc.scale(1.0 / r.len() as f64))
}

fn mean_over_subs<F: Element>(terms: Vec<Tensor<F>>) -> Result<Tensor<F>> {
    let n = terms.len();
    if n == 0 {
        return Err(VnetError::Input("no discriminator outputs".into()));
    }
    let mut acc = Tensor::scalar(F::zero());
    for t in terms {
        acc = acc.add(&t)?;
    }
    Ok(acc.scale(1.0 / n as f64))
}

/// Discriminator loss to minimize (the negated objective).
///
/// With `split`, the first two terms see `omega` detached and the last two
/// see `h` detached, so each parameter group receives gradient from exactly
/// one pair of terms.
pub fn adv_loss_discriminator<F: Element>(
    family: LossFamily,
    real: &[DiscriminatorOutput<F>],
    fake: &[DiscriminatorOutput<F>],
    split: bool,
) -> Result<Tensor<F>> {
    if real.len() != fake.len() {
        return Err(VnetError::Input(format!("{} real vs {} fake discriminator outputs", real.len(), fake.len())));
    }
    let mut terms = Vec::with_capacity(real.len());
    for (r, f) in real.iter().zip(fake) {
        let obj = if split {
            let phi = family
                .r1(&r.project(false, true)?)
                .mean()
                .add(&family.r2(&f.project(false, true)?).mean())?;
            let omega = family
                .r3(&r.project(true, false)?)
                .mean()
                .sub(&family.r3(&f.project(true, false)?).mean())?;
            phi.add(&omega)?
        } else {
            family.r1(&r.score).mean().add(&family.r2(&f.score).mean())?
        };
        terms.push(obj.neg());
    }
    mean_over_subs(terms)
}

/// The `phi` and `omega` halves of the split objective, for gradient audits.
pub fn split_terms<F: Element>(
    family: LossFamily,
    real: &[DiscriminatorOutput<F>],
    fake: &[DiscriminatorOutput<F>],
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (mut phi, mut omega) = (Vec::new(), Vec::new());
    for (r, f) in real.iter().zip(fake) {
        phi.push(
            family
                .r1(&r.project(false, true)?)
                .mean()
                .add(&family.r2(&f.project(false, true)?).mean())?
                .neg(),
        );
        omega.push(
            family
                .r3(&r.project(true, false)?)
                .mean()
                .sub(&family.r3(&f.project(true, false)?).mean())?
                .neg(),
        );
    }
    Ok((mean_over_subs(phi)?, mean_over_subs(omega)?))
}

/// Generator adversarial loss: mean `R3` of the fake scores.
pub fn adv_loss_generator<F: Element>(family: LossFamily, fake: &[DiscriminatorOutput<F>]) -> Result<Tensor<F>> {
    mean_over_subs(fake.iter().map(|o| family.r3(&o.score).mean()).collect())
}

/// Weighted generator objective and its parts.
pub struct GeneratorLosses<F: Element> {
    pub fm: Tensor<F>,
    pub mel: Tensor<F>,
    pub adv: Option<Tensor<F>>,
    pub total: Tensor<F>,
}

/// Generator objective from tier spectrograms and (optionally) the
/// discriminator outputs on the generated audio. `adv_weight` overrides the
/// configured weight (warm-up).
pub fn generator_losses<F: Element>(
    family: LossFamily,
    weights: LossWeights,
    fm_mode: FmMode,
    real_specs: &[Tensor<F>],
    fake_specs: &[Tensor<F>],
    real_out: Option<&[DiscriminatorOutput<F>]>,
    fake_out: Option<&[DiscriminatorOutput<F>]>,
) -> Result<GeneratorLosses<F>> {
    let fm = match (fm_mode, real_out, fake_out) {
        (FmMode::Spectrogram, _, _) => feature_matching_loss(real_specs, fake_specs)?,
        (FmMode::Features, Some(r), Some(f)) => feature_loss(r, f)?,
        (FmMode::Features, _, _) => {
            return Err(VnetError::Input("feature-mode matching needs discriminator outputs".into()))
        }
    };
    let mel = mel_spectrogram_loss(real_specs, fake_specs)?;
    let adv = match fake_out {
        Some(f) => Some(adv_loss_generator(family, f)?),
        None => None,
    };
    let mut total = fm.scale(weights.fm).add(&mel.scale(weights.mel))?;
    if let Some(a) = &adv {
        total = total.add(&a.scale(weights.adv))?;
    }
    Ok(GeneratorLosses { fm, mel, adv, total })
}

/// Every report field for a real/generated pair, without updating anything.
pub fn total_losses<F: Element>(
    x: &Tensor<F>,
    x_hat: &Tensor<F>,
    disc: &crate::discriminators::Discriminators<F>,
    family: LossFamily,
    weights: LossWeights,
    fm_mode: FmMode,
) -> Result<LossReport> {
    if x.shape() != x_hat.shape() {
        return Err(VnetError::Input(format!("length mismatch: {:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    let rs = disc.mtd.spectrograms(x)?;
    let fs = disc.mtd.spectrograms(x_hat)?;
    let ro = disc.forward_with_spectrograms(x, &rs)?;
    let fo = disc.forward_with_spectrograms(x_hat, &fs)?;
    let g = generator_losses(family, weights, fm_mode, &rs, &fs, Some(&ro), Some(&fo))?;
    let d = adv_loss_discriminator(family, &ro, &fo, family.uses_split())?;
    let report = LossReport {
        l_fm: g.fm.item().as_f64(),
        l_mel: g.mel.item().as_f64(),
        l_adv_g: g.adv.as_ref().map_or(0.0, |a| a.item().as_f64()),
        l_adv_d: d.item().as_f64(),
        total_g: g.total.item().as_f64(),
        total_d: d.item().as_f64(),
    };
    report.ensure_finite()?;
    Ok(report)
}
