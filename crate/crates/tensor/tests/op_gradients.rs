use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnet_tensor::gradcheck::{grad_check, GradCheckOptions};
use vnet_tensor::ops::stft::StftGeometry;
use vnet_tensor::{Conv1dOpts, Conv2dOpts, LvcOpts, PadMode, Result, Tensor};

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Checks `sum(f(x) * r)` for a fixed random `r` so every output matters.
fn check(name: &str, point: Tensor<f64>, f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probe = f(&point).unwrap();
    let r = rand_tensor(&mut rng, probe.shape(), 1.0);
    let report = grad_check(|x| f(x)?.mul(&r).map(|t| t.sum()), &point, GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error <= TOL, "{name}: {report:?}");
}

#[test]
fn conv1d_input_and_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = rand_tensor(&mut rng, &[4, 2, 3], 0.5);
    let x = rand_tensor(&mut rng, &[2, 4, 11], 1.0);
    let opts = Conv1dOpts {
        stride: 2,
        padding: 2,
        dilation: 2,
        groups: 2,
        mode: PadMode::Reflect,
    };
    check("conv1d/x", x.clone(), |x| x.conv1d(&w, opts));
    check("conv1d/w", w.clone(), |w| x.conv1d(w, opts));
    let zeros = Conv1dOpts::same(3, 1, PadMode::Zeros);
    let w1 = rand_tensor(&mut rng, &[3, 4, 3], 0.5);
    check("conv1d/zeros", x.clone(), |x| x.conv1d(&w1, zeros));
}

#[test]
fn conv_transpose1d_input_and_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = rand_tensor(&mut rng, &[3, 2, 4], 0.5);
    let x = rand_tensor(&mut rng, &[1, 3, 5], 1.0);
    check("convT/x", x.clone(), |x| x.conv_transpose1d(&w, 2, 1));
    check("convT/w", w.clone(), |w| x.conv_transpose1d(w, 2, 1));
}

#[test]
fn conv2d_input_and_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5);
    let x = rand_tensor(&mut rng, &[1, 2, 6, 9], 1.0);
    let opts = Conv2dOpts {
        stride: (1, 2),
        padding: (1, 2),
        dilation: (1, 2),
    };
    check("conv2d/x", x.clone(), |x| x.conv2d(&w, opts));
    check("conv2d/w", w.clone(), |w| x.conv2d(w, opts));
}

#[test]
fn spectral_normalized_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5);
    let x = rand_tensor(&mut rng, &[1, 2, 5, 7], 1.0);
    let mut u = vec![1.0; 3];
    let (_, sigma) = w.spectral_norm(&mut u, 20).unwrap();
    let opts = Conv2dOpts {
        padding: (1, 1),
        ..Default::default()
    };
    // sigma is a constant of the backward pass, so it is frozen for the probe.
    check("sn-conv2d/w", w.clone(), |w| x.conv2d(&w.scale_by_sigma(sigma), opts));
    let wn = w.scale_by_sigma(sigma);
    check("sn-conv2d/x", x.clone(), |x| x.conv2d(&wn, opts));
}

#[test]
fn weight_norm_direction_and_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = rand_tensor(&mut rng, &[3, 2, 2], 1.0);
    let g = Tensor::new(&[3], vec![0.7, -1.3, 2.0]).unwrap();
    check("wn/v", v.clone(), |v| v.weight_norm(&g));
    check("wn/g", g.clone(), |g| v.weight_norm(g));
}

#[test]
fn location_variable_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (cin, cout, k, frames, hop) = (2, 3, 3, 3, 4);
    let x = rand_tensor(&mut rng, &[1, cin, frames * hop], 1.0);
    let kern = rand_tensor(&mut rng, &[1, cout * cin * k, frames], 0.5);
    let bias = rand_tensor(&mut rng, &[1, cout, frames], 0.5);
    let opts = LvcOpts {
        kernel_size: k,
        dilation: 2,
    };
    check("lvc/x", x.clone(), |x| x.lvc(&kern, &bias, opts));
    check("lvc/kernels", kern.clone(), |kv| x.lvc(kv, &bias, opts));
    check("lvc/bias", bias.clone(), |b| x.lvc(&kern, b, opts));
}

#[test]
fn stft_magnitude_signal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&mut rng, &[2, 40], 1.0);
    let geom = StftGeometry {
        n_fft: 16,
        hop: 4,
        win: 12,
    };
    check("stft", x, |x| x.stft_magnitude(geom, 1e-9));
}

#[test]
fn elementwise_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Keep away from the kinks of leaky_relu / abs / clamp.
    let x = Tensor::new(&[6], vec![0.8, -0.6, 1.7, -1.1, 0.35, -2.4]).unwrap();
    let pos = Tensor::new(&[6], vec![0.8, 0.6, 1.7, 1.1, 0.35, 2.4]).unwrap();
    let y = rand_tensor(&mut rng, &[6], 1.0);
    check("leaky_relu", x.clone(), |x| Ok(x.leaky_relu(0.1)));
    check("tanh", x.clone(), |x| Ok(x.tanh()));
    check("sigmoid", x.clone(), |x| Ok(x.sigmoid()));
    check("exp", x.clone(), |x| Ok(x.exp()));
    check("abs", x.clone(), |x| Ok(x.abs()));
    check("square", x.clone(), |x| Ok(x.square()));
    check("neg-scale-shift", x.clone(), |x| Ok(x.neg().scale(1.5).add_scalar(0.2)));
    check("sqrt", pos.clone(), |x| Ok(x.sqrt()));
    check("ln", pos.clone(), |x| Ok(x.ln()));
    check("clamp_min", pos.clone(), |x| Ok(x.clamp_min(0.5)));
    check("gated/a", x.clone(), |x| x.gated(&y));
    check("gated/b", y.clone(), |y| x.gated(y));
    check("mul", x.clone(), |x| x.mul(&y));
    check("div", pos.clone(), |p| y.div(p));
    check("sub", x.clone(), |x| y.sub(x));
}

#[test]
fn shape_and_reduction_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&mut rng, &[2, 3, 5], 1.0);
    let bias = rand_tensor(&mut rng, &[3], 1.0);
    check("reshape", x.clone(), |x| x.reshape(&[6, 5]));
    check("slice", x.clone(), |x| x.slice(2, 1, 4));
    check("concat", x.clone(), |x| Tensor::concat(&[x.clone(), x.slice(1, 0, 1)?], 1));
    check("pad_reflect", x.clone(), |x| x.pad_last(3, 4, PadMode::Reflect));
    check("pad_zeros", x.clone(), |x| x.pad_last(1, 2, PadMode::Zeros));
    check("add_bias", bias.clone(), |b| x.add_bias(b));
    check("mean", x.clone(), |x| Ok(x.mean()));
    check("sum_last", x.clone(), |x| Ok(x.sum_last()));
    check("norm_last", x.clone(), |x| Ok(x.norm_last()));
}
