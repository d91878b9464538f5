use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use vnet_core::config::{Preset, TrainConfig};
use vnet_core::discriminators::{DiscriminatorConfig, Mpd};
use vnet_core::dsp::AudioClip;
use vnet_core::losses::LossReport;
use vnet_core::trainer::{Dataset, Trainer};
use vnet_tensor::{Element, Module, Tensor};

fn tone_dataset() -> Dataset {
    let x: Vec<f64> = (0..6000)
        .map(|i| {
            let t = i as f64 / 24_000.0;
            0.4 * (2.0 * PI * 220.0 * t).sin() + 0.2 * (2.0 * PI * 440.0 * t).sin()
        })
        .collect();
    Dataset::from_clips(vec![AudioClip::new(x, 24_000).unwrap()]).unwrap()
}

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::preset(Preset::Tiny);
    c.adv_warmup = 0;
    c
}

fn reports<F: Element>(cfg: TrainConfig, steps: u64) -> Vec<LossReport> {
    let data = tone_dataset();
    let mut t = Trainer::<F>::new(cfg).unwrap();
    let mut out = Vec::new();
    t.run(&data, steps, |_, r| {
        out.push(*r);
        Ok(())
    })
    .unwrap();
    out
}

fn bits(r: &[LossReport]) -> Vec<[u64; 6]> {
    r.iter().map(|r| r.values().map(f64::to_bits)).collect()
}

#[test]
fn same_seed_gives_bit_identical_reports() {
    assert_eq!(bits(&reports::<f64>(tiny_config(), 6)), bits(&reports::<f64>(tiny_config(), 6)));
    assert_eq!(bits(&reports::<f32>(tiny_config(), 4)), bits(&reports::<f32>(tiny_config(), 4)));
    let mut other = tiny_config();
    other.seed += 1;
    assert_ne!(bits(&reports::<f64>(tiny_config(), 3)), bits(&reports::<f64>(other, 3)));
}

/// Largest singular value by SVD, as an oracle for the power iteration.
fn spectral_norm(w: &[f64], rows: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, w.len() / rows, w);
    m.singular_values().max()
}

#[test]
fn spectral_norm_keeps_effective_weights_near_unit_norm() {
    let data = tone_dataset();
    let mut cfg = tiny_config();
    cfg.adam_d.lr = 2e-3;
    let mut t = Trainer::<f64>::new(cfg).unwrap();
    let mut worst = 0.0f64;
    t.run(&data, 100, |t, _| {
        let sigmas: HashMap<String, f64> = t
            .disc
            .buffers()
            .into_iter()
            .filter_map(|b| b.name().strip_suffix(".sn_sigma").map(|n| (format!("{n}.weight"), b.get()[0])))
            .collect();
        assert!(!sigmas.is_empty());
        for p in t.disc.parameters() {
            if let Some(&sigma) = sigmas.get(p.name()) {
                let ratio = spectral_norm(p.data(), p.shape()[0]) / sigma;
                worst = worst.max(ratio);
                assert!(ratio <= 1.05, "{} at step {}: {ratio}", p.name(), t.step);
            }
        }
        Ok(())
    })
    .unwrap();
    assert!(worst > 0.9, "{worst}");
}

#[test]
fn overfits_one_clip() {
    let mut cfg = tiny_config();
    cfg.adam_g.lr = 2e-3;
    cfg.adv_warmup = 100;
    let r = reports::<f64>(cfg, 200);
    let mean = |s: &[LossReport]| s.iter().map(|r| r.l_mel).sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&r[..10]), mean(&r[190..]));
    assert!(last < 0.8 * first, "L_Mel {first} -> {last}");
    assert!(r.iter().all(|r| r.values().iter().all(|v| v.is_finite())));
    assert!(r[..100].iter().all(|r| r.l_adv_d == 0.0 && r.l_adv_g == 0.0));
    assert!(r[150..].iter().all(|r| r.l_adv_d != 0.0));
}

#[test]
fn mpd_first_layer_only_sees_its_phase() {
    let cfg = DiscriminatorConfig::tiny().mpd;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
    let mpd = Mpd::<f64>::new(cfg.clone(), &mut rng).unwrap();
    let len = 60;
    let base: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
    for (index, &p) in cfg.periods.iter().enumerate() {
        let t = 25;
        let mut bumped = base.clone();
        bumped[t] += 0.5;
        let a = mpd.first_layer(&Tensor::new(&[1, 1, len], base.clone()).unwrap(), index).unwrap();
        let b = mpd.first_layer(&Tensor::new(&[1, 1, len], bumped).unwrap(), index).unwrap();
        let cols = a.dim(3);
        assert_eq!(cols, p);
        let mut touched = vec![false; cols];
        for (i, (u, v)) in a.data().iter().zip(b.data()).enumerate() {
            if u != v {
                touched[i % cols] = true;
            }
        }
        let expect: Vec<bool> = (0..cols).map(|c| c == t % p).collect();
        assert_eq!(touched, expect, "period {p}");
    }
}
