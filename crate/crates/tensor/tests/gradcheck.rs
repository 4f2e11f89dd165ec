//! Central finite-difference checks for every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawdiff_tensor::{Graph, PadMode, Tensor, Var};

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Builds `f(inputs)` into a scalar via a fixed random projection, then
/// compares analytic gradients with central differences.
fn check<F>(inputs: &[Tensor<f64>], f: F, tol: f64)
where
    F: for<'g> Fn(&[Var<'g, f64>]) -> Var<'g, f64>,
{
    let eval = |ins: &[Tensor<f64>]| -> f64 {
        let g = Graph::inference();
        let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&vars).value();
        let proj = random(out.shape(), 999);
        out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    };
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&vars);
    let proj = g.constant(random(&out.shape(), 999));
    let loss = out.mul(proj).sum();
    let grads = g.backward(loss);
    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("gradient missing").clone();
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
            assert!(err < tol, "input {k} elem {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn elementwise_ops() {
    let a = random(&[2, 3, 2, 2], 1);
    let b = random(&[2, 3, 2, 2], 2);
    check(&[a.clone(), b.clone()], |v| v[0].add(v[1]).mul(v[1]).sub(v[0].mul_scalar(0.3)), 1e-6);
    check(&[a.clone()], |v| v[0].silu().tanh().square(), 1e-6);
    check(&[a.clone()], |v| v[0].relu().add_scalar(0.5).neg(), 1e-6);
    let pos = a.map(|x| x.abs() + 0.2);
    check(&[pos], |v| v[0].ln().abs(), 1e-6);
    check(&[a], |v| v[0].mean().add(v[0].sum()), 1e-6);
}

#[test]
fn channel_broadcasts() {
    let x = random(&[2, 3, 2, 2], 3);
    check(&[x.clone(), random(&[2, 3], 4), random(&[3], 5)], |v| v[0].mul_channels(v[1]).add_channels(v[2]), 1e-6);
    check(&[x, random(&[3], 6), random(&[2, 3], 7)], |v| v[0].mul_channels(v[1]).add_channels(v[2]), 1e-6);
}

#[test]
fn conv_variants() {
    for &(stride, pad, k, mode) in &[
        (1, 1, 3, PadMode::Zeros),
        (1, 1, 3, PadMode::Reflect),
        (2, 1, 3, PadMode::Zeros),
        (1, 0, 1, PadMode::Zeros),
    ] {
        let x = random(&[2, 2, 4, 5], 10);
        let w = random(&[3, 2, k, k], 11);
        let b = random(&[3], 12);
        check(&[x.clone(), w.clone(), b], |v| v[0].conv2d(v[1], Some(v[2]), stride, pad, mode), 1e-6);
        check(&[x, w], |v| v[0].conv2d(v[1], None, stride, pad, mode), 1e-6);
    }
}

#[test]
fn group_norm_grad() {
    let x = random(&[2, 4, 3, 3], 20);
    check(&[x.clone()], |v| v[0].group_norm(2, 1e-5), 1e-5);
    check(&[x], |v| v[0].group_norm(4, 1e-5), 1e-5);
}

#[test]
fn linear_and_bmm() {
    check(&[random(&[3, 4], 30), random(&[5, 4], 31), random(&[5], 32)], |v| v[0].linear(v[1], Some(v[2])), 1e-6);
    for &(ta, tb) in &[(false, false), (true, false), (false, true), (true, true)] {
        let a = if ta { random(&[2, 4, 3], 33) } else { random(&[2, 3, 4], 33) };
        let b = if tb { random(&[2, 5, 4], 34) } else { random(&[2, 4, 5], 34) };
        check(&[a, b], |v| v[0].bmm(v[1], ta, tb), 1e-6);
    }
}

#[test]
fn softmax_grad() {
    check(&[random(&[2, 3, 4], 40)], |v| v[0].softmax_last(), 1e-6);
}

#[test]
fn shape_ops() {
    let a = random(&[2, 2, 3, 4], 50);
    let b = random(&[2, 1, 3, 4], 51);
    check(&[a.clone(), b], |v| v[0].concat_channels(v[1]).reshape(&[2, 36]), 1e-6);
    check(&[a.clone()], |v| v[0].upsample_nearest2x(), 1e-6);
    check(&[a.clone()], |v| v[0].resize_bilinear(2, 2), 1e-6);
    check(&[a.clone()], |v| v[0].resize_bilinear(5, 7), 1e-6);
    check(&[a], |v| v[0].resize_bilinear(3, 4), 1e-6);
}

#[test]
fn conv_forward_matches_direct_sum() {
    let x = random(&[1, 2, 5, 4], 60);
    let w = random(&[3, 2, 3, 3], 61);
    let g = Graph::inference();
    let y = g.constant(x.clone()).conv2d(g.constant(w.clone()), None, 1, 1, PadMode::Reflect).value();
    let refl = |i: isize, n: isize| if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    for co in 0..3 {
        for oy in 0..5isize {
            for ox in 0..4isize {
                let mut s = 0.0;
                for ci in 0..2 {
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let iy = refl(oy + ky - 1, 5) as usize;
                            let ix = refl(ox + kx - 1, 4) as usize;
                            s += x.data()[ci * 20 + iy * 4 + ix] * w.data()[((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize];
                        }
                    }
                }
                let got = y.data()[co * 20 + oy as usize * 4 + ox as usize];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn leaves_in_inference_graph_get_no_closures() {
    let g = Graph::<f32>::inference();
    let v = g.leaf(Tensor::ones(&[2]));
    assert!(!v.requires_grad());
    assert!(!v.square().requires_grad());
}
