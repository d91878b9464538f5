use proptest::prelude::*;
use vnet_tensor::Tensor;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // <conv1d(x, w), y> = <x, conv_transpose1d(y, w)> for matching geometry.
    #[test]
    fn transpose_is_adjoint_of_conv(
        batch in 1usize..3,
        cin in 1usize..4,
        cout in 1usize..4,
        k in 1usize..6,
        stride in 1usize..4,
        extra in 0usize..9,
        pad_frac in 0usize..3,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let padding = (k - 1) * pad_frac / 2;
        // Pick an input length whose conv output maps back to it exactly.
        let t_out = 1 + extra;
        let t_in = ((t_out - 1) * stride + k).saturating_sub(2 * padding);
        prop_assume!(t_in >= 1);
        let mut rand_vec = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = Tensor::new(&[batch, cin, t_in], rand_vec(batch * cin * t_in)).unwrap();
        let w = Tensor::new(&[cout, cin, k], rand_vec(cout * cin * k)).unwrap();
        let y = Tensor::new(&[batch, cout, t_out], rand_vec(batch * cout * t_out)).unwrap();
        let opts = vnet_tensor::Conv1dOpts { stride, padding, ..Default::default() };
        let cx = x.conv1d(&w, opts).unwrap();
        prop_assert_eq!(cx.shape(), y.shape());
        // The transposed weight layout is [C_in_of_transpose, C_out_of_transpose, K]
        // which is exactly conv1d's [C_out, C_in, K].
        let ty = y.conv_transpose1d(&w, stride, padding).unwrap();
        prop_assert_eq!(ty.shape(), x.shape());
        let lhs = dot(cx.data(), y.data());
        let rhs = dot(x.data(), ty.data());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()), "{} vs {}", lhs, rhs);
    }

    // Gradient of a path used twice equals the sum of both path gradients.
    #[test]
    fn reuse_accumulates(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let w = Tensor::variable(&[1], vec![a]).unwrap();
        let c = Tensor::new(&[1], vec![b]).unwrap();
        let loss = w.mul(&c).unwrap().add(&w.tanh()).unwrap().sum();
        vnet_tensor::backward(&loss).unwrap();
        let expected = b + (1.0 - a.tanh().powi(2));
        prop_assert!((w.grad().unwrap()[0] - expected).abs() < 1e-12);
    }
}
