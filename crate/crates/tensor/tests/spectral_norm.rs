use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vnet_tensor::Tensor;

fn top_singular(rows: usize, cols: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().iter().cloned().fold(0.0, f64::max)
}

#[test]
fn normalized_random_matrices_have_unit_top_singular_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w = Tensor::new(&[8, 8], data).unwrap();
        let mut u: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (wn, sigma) = w.spectral_norm(&mut u, 20).unwrap();
        let exact = top_singular(8, 8, w.data());
        let after = top_singular(8, 8, wn.data());
        assert!(after <= 1.0 + 1e-2, "top singular value {after} (sigma {sigma}, exact {exact})");
        assert!(sigma <= exact * (1.0 + 1e-9), "{sigma} > {exact}");
    }
}

#[test]
fn diagonal_two_by_two() {
    let w = Tensor::<f64>::new(&[2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
    let mut u = vec![0.6, 0.8];
    let (wn, sigma) = w.spectral_norm(&mut u, 20).unwrap();
    assert!((sigma - 2.0).abs() < 1e-6);
    assert!((top_singular(2, 2, wn.data()) - 1.0).abs() < 1e-6);
}

#[test]
fn unit_norm_matrix_is_unchanged() {
    let w = Tensor::<f64>::new(&[2, 3], vec![0.6, 0.0, 0.8, 0.0, 0.5, 0.0]).unwrap();
    let mut u = vec![1.0, 0.3];
    let (wn, _) = w.spectral_norm(&mut u, 20).unwrap();
    for (a, b) in wn.data().iter().zip(w.data()) {
        assert!((a - b).abs() < 1e-3);
    }
}

#[test]
fn zero_matrix_stays_zero() {
    let w = Tensor::<f64>::zeros(&[3, 4]);
    let mut u = vec![1.0, 0.0, 0.0];
    let (wn, sigma) = w.spectral_norm(&mut u, 20).unwrap();
    assert_eq!(sigma, 0.0);
    assert!(wn.data().iter().all(|&v| v == 0.0));
}

#[test]
fn same_seed_same_values() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(&[1, 2, 16], (0..32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let w = Tensor::new(&[2, 2, 3], (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        x.conv1d(&w, Default::default()).unwrap().tanh().to_vec()
    };
    let a: Vec<u64> = build().iter().map(|v: &f64| v.to_bits()).collect();
    let b: Vec<u64> = build().iter().map(|v: &f64| v.to_bits()).collect();
    assert_eq!(a, b);
}
