use proptest::prelude::*;
use vnet_core::config::{Preset, TrainConfig};
use vnet_core::discriminators::avg_pool_tensor;
use vnet_core::dsp::melfile::{decode_mel, encode_mel};
use vnet_core::dsp::wav::{decode_wav, encode_wav};
use vnet_core::dsp::{AudioClip, MelFilterbank, Spectrogram, SpectrogramKind, StftParams};
use vnet_core::losses::LossFamily;
use vnet_core::metrics::mcd::unaligned_mean;
use vnet_core::metrics::{dtw, evaluate_pair, m_stft, periodicity_and_vuv, PitchTrack};
use vnet_tensor::Tensor;

fn signal(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.9f64..0.9, len)
}

fn cepstra(frames: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), frames)
}

fn track(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 60.0f64..700.0], len)
}

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![Just(Preset::Desk), Just(Preset::Small), Just(Preset::Tiny), Just(Preset::Full)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_text_round_trips(
        p in preset(),
        steps in 1u64..100_000,
        seed in any::<u64>(),
        lr in 1e-6f64..1e-2,
        warmup in 0u64..5000,
        family in prop::sample::select(LossFamily::ALL.to_vec()),
        lambda_mel in 0.0f64..100.0,
    ) {
        let mut c = TrainConfig::preset(p);
        c.steps = steps;
        c.seed = seed;
        c.adam_d.lr = lr;
        c.adv_warmup = warmup;
        c.family = family;
        c.weights.mel = lambda_mel;
        let back = TrainConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn avg_pool_composes(x in signal(96), a in 1usize..5, b in 1usize..5) {
        let t = Tensor::new(&[1, 96], x).unwrap();
        let twice = avg_pool_tensor(&avg_pool_tensor(&t, a).unwrap(), b).unwrap();
        let once = avg_pool_tensor(&t, a * b).unwrap();
        prop_assert_eq!(twice.shape(), once.shape());
        for (u, v) in twice.data().iter().zip(once.data()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn wav_round_trip_within_one_lsb(x in signal(300), rate in prop::sample::select(vec![16_000u32, 22_050, 24_000, 44_100])) {
        let clip = AudioClip::new(x, rate).unwrap();
        let back = decode_wav(&encode_wav(&clip)).unwrap();
        prop_assert_eq!(back.sample_rate, rate);
        prop_assert_eq!(back.samples.len(), clip.samples.len());
        for (a, b) in back.samples.iter().zip(&clip.samples) {
            prop_assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn mel_file_round_trips(bins in 1usize..12, frames in 0usize..12, v in -20.0f32..5.0) {
        let spec = Spectrogram {
            values: (0..bins * frames).map(|i| (v + i as f32 * 0.25) as f64).collect(),
            bins,
            frames,
            kind: SpectrogramKind::LogMel,
            params: StftParams::MEL,
        };
        let back = decode_mel(&encode_mel(&spec)).unwrap();
        prop_assert_eq!(back.values, spec.values);
        prop_assert_eq!((back.bins, back.frames), (bins, frames));
    }

    #[test]
    fn mel_file_decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_mel(&bytes);
        let mut framed = b"VMEL".to_vec();
        framed.extend(&bytes);
        let _ = decode_mel(&framed);
    }

    #[test]
    fn m_stft_is_zero_on_self_and_ignores_polarity(x in signal(2048), y in signal(2048)) {
        prop_assert_eq!(m_stft(&x, &x).unwrap(), 0.0);
        let a = m_stft(&x, &y).unwrap();
        let flipped: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!(a > 0.0);
        prop_assert!((a - m_stft(&x, &flipped).unwrap()).abs() <= 1e-12 * a);
    }

    #[test]
    fn vuv_and_periodicity_ignore_frame_order(r in track(24), e in track(24), seed in any::<u64>()) {
        let mut order: Vec<usize> = (0..24).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let t = |f: Vec<f64>| PitchTrack { frame_hop: 256, f0: f };
        let (p, f1) = periodicity_and_vuv(&t(r.clone()), &t(e.clone()));
        let perm = |v: &[f64]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let (pp, f1p) = periodicity_and_vuv(&t(perm(&r)), &t(perm(&e)));
        prop_assert!((f1 - f1p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f1));
        match (p, pp) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
        let (_, self_f1) = periodicity_and_vuv(&t(r.clone()), &t(r));
        prop_assert_eq!(self_f1, 1.0);
    }

    #[test]
    fn dtw_never_exceeds_frame_paired_distance(a in cepstra(5..20), seed in any::<u64>()) {
        let mut s = seed;
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|f| {
                f.iter()
                    .map(|v| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        v + ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
                    })
                    .collect()
            })
            .collect();
        let r = dtw(&a, &b);
        prop_assert!(r.mean() <= unaligned_mean(&a, &b) + 1e-12);
        prop_assert_eq!(r.path.first(), Some(&(0, 0)));
        prop_assert_eq!(r.path.last(), Some(&(a.len() - 1, b.len() - 1)));
    }

    #[test]
    fn dtw_absorbs_a_leading_shift(a in cepstra(6..20), k in 1usize..5) {
        let mut b = vec![a[0].clone(); k];
        b.extend(a.iter().cloned());
        let r = dtw(&a, &b);
        prop_assert!(r.total < 1e-12, "{}", r.total);
    }
}

#[test]
fn pair_metrics_are_ideal_on_self() {
    let fb = MelFilterbank::standard();
    let x: Vec<f64> = (0..12_000)
        .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 180.0 * i as f64 / 24_000.0).sin())
        .collect();
    let m = evaluate_pair(&x, &x, &fb).unwrap();
    assert_eq!(m.m_stft, 0.0);
    assert_eq!(m.mcd, Some(0.0));
    assert_eq!(m.periodicity, Some(0.0));
    assert_eq!(m.vuv_f1, 1.0);
}
