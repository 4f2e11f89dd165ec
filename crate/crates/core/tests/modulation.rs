mod common;

use common::modulation::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawdiff::Error;
use rawdiff_tensor::Tensor;

#[test]
fn random_case_matches_scalar_loop_reference() {
    let (m, s) = setup(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, C, 8, 8], &mut rng);
    let g = random(&[2, GC, 16, 16], &mut rng);
    let y = apply(&m, &s, &x, &g).unwrap();
    for n in 0..2 {
        let d = max_diff(&y, n, &reference(&m, &s, &x, &g, n));
        assert!(d < 1e-6, "sample {n}: max diff {d}");
    }
}

#[test]
fn guidance_at_feature_resolution_is_not_resampled() {
    let (m, s) = setup(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&[1, C, 8, 8], &mut rng);
    let g = random(&[1, GC, 8, 8], &mut rng);
    let d = max_diff(&apply(&m, &s, &x, &g).unwrap(), 0, &reference(&m, &s, &x, &g, 0));
    assert!(d < 1e-6, "max diff {d}");
}

#[test]
fn zeroed_gamma_beta_is_plain_group_norm() {
    let (m, mut s) = setup(5);
    for id in [m.gamma.weight, m.gamma.bias, m.beta.weight, m.beta.bias] {
        s.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random(&[1, C, 8, 8], &mut rng);
    let g = random(&[1, GC, 16, 16], &mut rng);
    let y = apply(&m, &s, &x, &g).unwrap();
    let norm = group_norm(&to_map(&x, 0), GROUPS);
    let d = max_diff(&y, 0, &norm);
    assert!(d < 1e-6, "max diff {d}");
}

#[test]
fn constant_features_yield_the_beta_map() {
    let (m, s) = setup(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut x = Tensor::<f64>::zeros(&[1, C, 8, 8]);
    // Constant per group (pairs of channels share a value).
    for (c, plane) in x.data_mut().chunks_mut(64).enumerate() {
        plane.iter_mut().for_each(|v| *v = (c / 2) as f64 * 0.3 - 1.0);
    }
    let g = random(&[1, GC, 16, 16], &mut rng);
    let y = apply(&m, &s, &x, &g).unwrap();
    let gd = bilinear(&to_map(&g, 0), 8, 8);
    let mut a = conv3(&gd, &m.shared, &s);
    a.iter_mut().flatten().flatten().for_each(|v| *v = v.max(0.0));
    let d = max_diff(&y, 0, &conv3(&a, &m.beta, &s));
    assert!(d < 1e-9, "max diff {d}");
}

#[test]
fn channel_mismatch_is_a_configuration_error() {
    let (m, s) = setup(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = random(&[1, GC, 8, 8], &mut rng);
    let x = random(&[1, C + 2, 8, 8], &mut rng);
    assert!(matches!(apply(&m, &s, &x, &g), Err(Error::Config(_))));
    let x = random(&[1, C, 8, 8], &mut rng);
    let g = random(&[1, GC + 1, 8, 8], &mut rng);
    assert!(matches!(apply(&m, &s, &x, &g), Err(Error::Config(_))));
}
