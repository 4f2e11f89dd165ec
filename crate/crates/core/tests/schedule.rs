use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rawdiff::config::{SamplerKind, SamplingConfig};
use rawdiff::sampling::{sample, Denoiser};
use rawdiff::schedule::*;
use rawdiff_tensor::Tensor;

fn default_schedule() -> VarianceSchedule {
    make_linear_schedule(1000, 1e-4, 0.02).unwrap()
}

#[test]
fn alpha_bar_matches_brute_force_product() {
    let s = default_schedule();
    for t in [1usize, 2, 10, 250, 500, 999, 1000] {
        // Fresh product for every t, betas recomputed from the endpoint rule.
        let mut prod = 1.0f64;
        for k in 1..=t {
            let beta = 1e-4 + (k - 1) as f64 / 999.0 * (0.02 - 1e-4);
            prod *= 1.0 - beta;
        }
        let rel = (s.alpha_bar(t) - prod).abs() / prod;
        assert!(rel < 1e-10, "t={t}: {} vs {prod}", s.alpha_bar(t));
    }
    assert_eq!(s.alpha_bar(0), 1.0);
}

#[test]
fn sigma_matches_independent_coefficients() {
    let s = default_schedule();
    for t in [2usize, 3, 100, 777, 1000] {
        let ab = |k: usize| (1..=k).map(|j| 1.0 - s.beta(j)).product::<f64>();
        let want = ((1.0 - ab(t - 1)) / (1.0 - ab(t)) * s.beta(t)).sqrt();
        assert!((s.posterior().sigma(t) - want).abs() < 1e-12 * want.max(1e-6), "t={t}");
    }
}

/// Mean and variance of `q_sample` over 10^4 draws fall within three standard
/// errors of `sqrt(ab) x0` and `1 - ab`.
#[test]
fn forward_process_monte_carlo_statistics() {
    let s = default_schedule();
    let n = 10_000;
    let x0 = [0.7f64, -0.3];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for t in [1usize, 500, 1000] {
        let ab = s.alpha_bar(t);
        let mut draws = vec![Vec::with_capacity(n); x0.len()];
        for _ in 0..n {
            let eps: Vec<f64> = (0..x0.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            for (i, v) in q_sample(&x0, t, &eps, &s).unwrap().into_iter().enumerate() {
                draws[i].push(v);
            }
        }
        let var_true = 1.0 - ab;
        for (i, d) in draws.iter().enumerate() {
            let mean = d.iter().sum::<f64>() / n as f64;
            let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se_mean = (var_true / n as f64).sqrt();
            let se_var = var_true * (2.0 / (n - 1) as f64).sqrt();
            assert!((mean - ab.sqrt() * x0[i]).abs() <= 3.0 * se_mean, "t={t} mean {mean}");
            assert!((var - var_true).abs() <= 3.0 * se_var, "t={t} var {var} vs {var_true}");
        }
    }
}

/// Posterior for T = 4 expanded by hand from the betas.
#[test]
fn four_step_posterior_matches_hand_expansion() {
    let s = make_linear_schedule(4, 1e-4, 0.02).unwrap();
    let b = [1e-4, 1e-4 + (0.02 - 1e-4) / 3.0, 1e-4 + 2.0 * (0.02 - 1e-4) / 3.0, 0.02];
    let a: Vec<f64> = b.iter().map(|v| 1.0 - v).collect();
    let ab = [a[0], a[0] * a[1], a[0] * a[1] * a[2], a[0] * a[1] * a[2] * a[3]];
    let x0 = [0.4f64, -0.8, 0.1];
    let eps = [1.2, -0.3, 0.5];
    for t in 2..=4usize {
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let c0 = ab[t - 2].sqrt() * b[t - 1] / (1.0 - ab[t - 1]);
        let ct = a[t - 1].sqrt() * (1.0 - ab[t - 2]) / (1.0 - ab[t - 1]);
        let got = posterior_mean(&xt, &x0, t, &s).unwrap();
        for i in 0..3 {
            let want = c0 * x0[i] + ct * xt[i];
            assert!((got[i] - want).abs() < 1e-12, "t={t}: {} vs {want}", got[i]);
        }
        // The stochastic step averages to the same mean.
        let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
        let draws = 20_000;
        let mut mean = [0.0; 3];
        for _ in 0..draws {
            for (m, v) in mean.iter_mut().zip(ddpm_step(&xt, &x0, t, &s, &mut rng).unwrap()) {
                *m += v / draws as f64;
            }
        }
        let sigma = s.posterior().sigma(t);
        for i in 0..3 {
            assert!((mean[i] - got[i]).abs() <= 4.0 * sigma / (draws as f64).sqrt(), "t={t}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(ddpm_step(&[0.3, 2.0], &[0.25, 1.5], 1, &s, &mut rng).unwrap(), vec![0.25, 1.0]);
}

#[test]
fn ddim_update_is_consistent_along_the_whole_grid() {
    let s = default_schedule();
    let x0 = [0.5f64, -0.9, 0.0, 0.99];
    let eps = [0.3, -1.1, 2.0, 0.7];
    let ts = make_ddim_timesteps(1000, 6).unwrap();
    for (i, &t) in ts.iter().enumerate() {
        let t_prev = ts.get(i + 1).copied().unwrap_or(0);
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let got = ddim_step(&xt, &x0, t, t_prev, &s).unwrap();
        let want = if t_prev == 0 { x0.to_vec() } else { q_sample(&x0, t_prev, &eps, &s).unwrap() };
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "t={t}->{t_prev}: {g} vs {w}");
        }
    }
}

#[test]
fn ddim_grid_rules() {
    assert_eq!(make_ddim_timesteps(1000, 6).unwrap(), vec![1000, 800, 600, 401, 201, 1]);
    assert_eq!(make_ddim_timesteps(1000, 1).unwrap(), vec![1000]);
    assert_eq!(make_ddim_timesteps(7, 7).unwrap(), vec![7, 6, 5, 4, 3, 2, 1]);
    assert!(make_ddim_timesteps(10, 11).is_err());
    for steps in [2usize, 3, 6, 24, 100, 999] {
        let ts = make_ddim_timesteps(1000, steps).unwrap();
        assert_eq!(ts.len(), steps);
        let gaps: Vec<usize> = ts.windows(2).map(|w| w[0] - w[1]).collect();
        assert!(gaps.iter().all(|&g| g > 0));
        let (lo, hi) = (*gaps.iter().min().unwrap(), *gaps.iter().max().unwrap());
        assert!(hi as f64 / lo as f64 <= 2.0, "steps {steps}: gaps {lo}..{hi}");
    }
}

struct Recorder {
    seen: RefCell<Vec<usize>>,
}

impl Denoiser for Recorder {
    fn predict_x0(&self, x_t: &Tensor<f32>, _rgb: &Tensor<f32>, t: usize) -> rawdiff::Result<Tensor<f32>> {
        self.seen.borrow_mut().push(t);
        Ok(Tensor::zeros(x_t.shape()))
    }
}

#[test]
fn samplers_visit_the_documented_timesteps() {
    let s = default_schedule();
    let rgb = Tensor::<f32>::zeros(&[1, 3, 4, 4]);
    let rec = Recorder { seen: RefCell::new(vec![]) };
    let spec = SamplingConfig { sampler: SamplerKind::Ddim, steps: 6, seed: 3 };
    let out = sample(&rec, &rgb, &s, &spec).unwrap();
    assert_eq!(*rec.seen.borrow(), vec![1000, 800, 600, 401, 201, 1]);
    assert_eq!(out.model_calls, 6);
    assert_eq!(out.raw.shape(), vec![1, 4, 2, 2]);

    let rec = Recorder { seen: RefCell::new(vec![]) };
    let spec = SamplingConfig { sampler: SamplerKind::Ddpm, steps: 1000, seed: 3 };
    let out = sample(&rec, &rgb, &s, &spec).unwrap();
    assert_eq!(*rec.seen.borrow(), (1..=1000).rev().collect::<Vec<_>>());
    assert_eq!(out.model_calls, 1000);
}
