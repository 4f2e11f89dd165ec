use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawdiff::config::{SamplerKind, SamplingConfig};
use rawdiff::eval::*;
use rawdiff::guidance::GuidanceConfig;
use rawdiff::metrics::*;
use rawdiff::nn::ParamStore;
use rawdiff::raw::synth::render_pair;
use rawdiff::raw::{IspParams, Planes};
use rawdiff::sampling::ModelDenoiser;
use rawdiff::schedule::DiffusionConfig;
use rawdiff::unet::{ModelConfig, RawDiffusionModel};

fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}

#[test]
fn psnr_of_a_uniform_tenth_is_twenty_db() {
    assert_eq!(psnr(&[0.0; 64], &[0.1; 64]).unwrap(), 20.0);
    assert!((psnr(&[0.3; 10], &[0.2; 10]).unwrap() - 20.0).abs() < 1e-12);
    assert_eq!(psnr(&[0.4; 3], &[0.4; 3]).unwrap(), f64::INFINITY);
    assert!(psnr(&[0.4; 3], &[0.4; 4]).is_err());
}

#[test]
fn psnr_matches_scalar_loop_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(300, &mut rng), random(300, &mut rng));
    let mut sse = 0.0;
    for i in 0..300 {
        sse += (a[i] - b[i]).powi(2);
    }
    let want = 10.0 * (1.0 / (sse / 300.0)).log10();
    assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-6);
    assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
}

#[test]
fn psnr_falls_as_noise_grows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = random(1000, &mut rng);
    let noise: Vec<f64> = (0..1000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let values: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2]
        .iter()
        .map(|amp| {
            let noisy: Vec<f64> = base.iter().zip(&noise).map(|(b, n)| b + amp * n).collect();
            psnr(&noisy, &base).unwrap()
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

/// Direct 2-D windowed SSIM, no separable filtering.
fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let n = 11;
    let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..n {
                for dx in 0..n {
                    let wt = g[dy] * g[dx] / (gs * gs);
                    let (p, q) = (a[(y0 + dy) * w + x0 + dx], b[(y0 + dy) * w + x0 + dx]);
                    ma += wt * p;
                    mb += wt * q;
                    saa += wt * p * p;
                    sbb += wt * q * q;
                    sab += wt * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_windowed_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (17, 14);
    let a = random(h * w, &mut rng);
    let b: Vec<f64> = a.iter().map(|v| (v + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0)).collect();
    let got = ssim_plane(&a, &b, h, w).unwrap();
    assert!((got - ssim_oracle(&a, &b, h, w)).abs() < 1e-12);
    assert!((got - ssim_plane(&b, &a, h, w).unwrap()).abs() < 1e-15);
    assert!((-1.0..1.0).contains(&got));
}

#[test]
fn ssim_identities_and_constant_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = Planes::from_vec(3, 12, 12, random(432, &mut rng)).unwrap();
    assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    let half = Planes::from_vec(1, 11, 11, vec![0.5; 121]).unwrap();
    assert!((ssim(&half, &half).unwrap() - 1.0).abs() < 1e-12);
    let (x, y) = (0.25, 0.75);
    let c1 = 0.01f64.powi(2);
    let want = (2.0 * x * y + c1) / (x * x + y * y + c1);
    let p = Planes::from_vec(1, 13, 12, vec![x; 156]).unwrap();
    let q = Planes::from_vec(1, 13, 12, vec![y; 156]).unwrap();
    assert!((ssim(&p, &q).unwrap() - want).abs() < 1e-9);
    assert!(ssim(&Planes::zeros(1, 10, 20), &Planes::zeros(1, 10, 20)).is_err());
}

fn test_images(n: usize, raw_side: usize, seed: u64) -> Vec<EvalImage> {
    let p = IspParams::default();
    (0..n)
        .map(|i| {
            let (raw, rgb) = render_pair(2 * raw_side, 2 * raw_side, &p, seed + i as u64).unwrap();
            EvalImage { name: format!("img{i}"), raw, rgb }
        })
        .collect()
}

fn ddim(steps: usize) -> SamplingConfig {
    SamplingConfig { sampler: SamplerKind::Ddim, steps, seed: 0 }
}

#[test]
fn oracle_scores_perfectly_on_nine_equal_cells() {
    let schedule = DiffusionConfig::default().build().unwrap();
    let images = test_images(1, 300, 10);
    let r = patch_grid_eval(&Generator::Oracle, &images, &schedule, &ddim(6), 3, 0).unwrap();
    assert_eq!((r.n_images, r.n_patches), (1, 9));
    assert_eq!((r.images[0].cell_height, r.images[0].cell_width), (100, 100));
    assert_eq!(r.psnr_infinite, 9);
    assert_eq!(r.psnr_mean, None);
    assert!(r.patches.iter().all(|p| p.psnr_db.is_none() && (p.ssim - 1.0).abs() < 1e-12));
    assert!((r.ssim_mean.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r.model_calls, 6);
    let table = r.patch_table();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 10);
    assert!(rows[1].contains(",inf,"));
}

fn tiny_model() -> (RawDiffusionModel, ParamStore<f32>) {
    let cfg = ModelConfig {
        n_resblocks: 1,
        base_features: 8,
        feature_expansion: vec![1, 1],
        norm_groups: 4,
        attention_resolutions: vec![8],
        reference_raw_size: 16,
        guidance: GuidanceConfig { n_resblocks: 1, n_features: 4 },
        modulation_hidden: 4,
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = RawDiffusionModel::new(&cfg, &mut store, &mut rng).unwrap();
    (m, store)
}

#[test]
fn aggregates_are_plain_means_and_runs_repeat() {
    let schedule = DiffusionConfig::default().build().unwrap();
    let (model, params) = tiny_model();
    let gen = Generator::Model(ModelDenoiser { model: &model, params: &params, schedule: &schedule });
    let mut images = test_images(2, 48, 20);
    // 30x30 → 10x10 cells: below the SSIM window, skipped.
    images.extend(test_images(1, 30, 30).into_iter().map(|mut e| {
        e.name = "small".into();
        e
    }));
    let r = patch_grid_eval(&gen, &images, &schedule, &ddim(2), 3, 9).unwrap();
    assert_eq!(r.skipped_images, vec!["small".to_string()]);
    assert_eq!((r.n_images, r.n_patches), (2, 18));
    assert_eq!(r.model_calls, 4);
    assert_eq!((r.sampler, r.sampler_steps, r.seed, r.grid), (SamplerKind::Ddim, 2, 9, 3));

    let psnrs: Vec<f64> = r.patches.iter().map(|p| p.psnr_db.unwrap()).collect();
    let hand = psnrs.iter().sum::<f64>() / 18.0;
    assert!((r.psnr_mean.unwrap() - hand).abs() < 1e-12);
    let sd = (psnrs.iter().map(|v| (v - hand).powi(2)).sum::<f64>() / 18.0).sqrt();
    assert!((r.psnr_std.unwrap() - sd).abs() < 1e-12);
    let ssim_hand = r.patches.iter().map(|p| p.ssim).sum::<f64>() / 18.0;
    assert!((r.ssim_mean.unwrap() - ssim_hand).abs() < 1e-12);
    for (i, img) in r.images.iter().enumerate() {
        let own = &psnrs[9 * i..9 * (i + 1)];
        assert!((img.psnr_mean.unwrap() - own.iter().sum::<f64>() / 9.0).abs() < 1e-12);
    }

    let again = patch_grid_eval(&gen, &images, &schedule, &ddim(2), 3, 9).unwrap();
    assert_eq!(again, r);
    let other = patch_grid_eval(&gen, &images, &schedule, &ddim(2), 3, 10).unwrap();
    assert_ne!(other.patches, r.patches);

    let dir = tempfile::tempdir().unwrap();
    let path = r.write(dir.path()).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn grid_must_be_positive_and_rgb_must_match() {
    let schedule = DiffusionConfig::default().build().unwrap();
    let images = test_images(1, 33, 40);
    assert!(patch_grid_eval(&Generator::Oracle, &images, &schedule, &ddim(1), 0, 0).is_err());
    let mut bad = test_images(1, 33, 41);
    bad[0].rgb = test_images(1, 34, 42).remove(0).rgb;
    assert!(patch_grid_eval(&Generator::Oracle, &bad, &schedule, &ddim(1), 3, 0).is_err());
}
