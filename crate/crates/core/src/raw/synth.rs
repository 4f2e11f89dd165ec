//! Procedural RAW/RGB pairs.
//!
//! Scenes are drawn in output-linear RGB: a two-colour gradient background
//! plus a handful of rectangles and disks with soft edges. Each scene is then
//! "unprocessed" (inverse colour matrix, inverse white balance) to camera
//! space, sampled on the RGGB mosaic, quantized to integer counts, and
//! developed by [`isp_forward`] to obtain its RGB partner.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::isp::invert3;
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::{bayer, container, isp_forward, png_io, Cfa, IspParams, Planes, RawImage, RgbImage};
use crate::error::{bail, Error, Result};

pub const ISP_RECORD: &str = "synthetic";

/// SplitMix64 step, used to derive independent per-item seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Shape {
    Rect { cx: f64, cy: f64, hw: f64, hh: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn signed_distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Rect { cx, cy, hw, hh } => ((x - cx).abs() - hw).max((y - cy).abs() - hh),
            Shape::Disk { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r,
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

/// Output-linear scene, `3 x h x w`.
fn render_scene(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Planes {
    let c0 = random_color(rng, 0.1, 0.7);
    let c1 = random_color(rng, 0.1, 0.7);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let span = (h as f64 * st.abs() + w as f64 * ct.abs()).max(1.0);
    let mut img = Planes::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let u = ((x as f64 - w as f64 / 2.0) * ct + (y as f64 - h as f64 / 2.0) * st) / span + 0.5;
            let u = u.clamp(0.0, 1.0);
            for c in 0..3 {
                img.set(c, y, x, c0[c] * (1.0 - u) + c1[c] * u);
            }
        }
    }
    let n_shapes = rng.gen_range(3..=7);
    let side = h.min(w) as f64;
    for _ in 0..n_shapes {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let shape = if rng.gen_bool(0.5) {
            Shape::Rect {
                cx,
                cy,
                hw: rng.gen_range(0.05..0.3) * side,
                hh: rng.gen_range(0.05..0.3) * side,
            }
        } else {
            Shape::Disk {
                cx,
                cy,
                r: rng.gen_range(0.05..0.3) * side,
            }
        };
        let color = random_color(rng, 0.03, 0.9);
        let edge: f64 = rng.gen_range(1.5..4.0);
        for y in 0..h {
            for x in 0..w {
                let d = shape.signed_distance(x as f64 + 0.5, y as f64 + 0.5);
                let a = (0.5 - d / edge).clamp(0.0, 1.0);
                if a > 0.0 {
                    for (c, &sc) in color.iter().enumerate() {
                        let v = img.get(c, y, x);
                        img.set(c, y, x, v * (1.0 - a) + sc * a);
                    }
                }
            }
        }
    }
    img
}

/// Renders one RAW/RGB pair of RGB size `h x w` (both even).
pub fn render_pair(h: usize, w: usize, p: &IspParams, seed: u64) -> Result<(RawImage, RgbImage)> {
    p.validate()?;
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        bail!(InvalidArgument, "image size {h}x{w} must be even");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = render_scene(h, w, &mut rng);
    let inv = invert3(&p.color_matrix)?;
    let noise = match p.noise_sigma.filter(|s| *s > 0.0) {
        Some(s) => Some(Normal::new(0.0, s).map_err(|e| Error::Config(e.to_string()))?),
        None => None,
    };
    let range = p.range();
    let cfa = Cfa::Rggb;
    let mut mosaic = Planes::zeros(1, h, w);
    for y in 0..h {
        for x in 0..w {
            let s = [scene.get(0, y, x), scene.get(1, y, x), scene.get(2, y, x)];
            let c = cfa.color_at(y, x);
            let cam = inv[c][0] * s[0] + inv[c][1] * s[1] + inv[c][2] * s[2];
            let mut v = cam / p.wb_gains[c];
            if let Some(n) = &noise {
                v += n.sample(&mut rng);
            }
            let counts = (p.black_level + v.clamp(0.0, 1.0) * range).round();
            mosaic.set(0, y, x, counts.clamp(p.black_level, p.white_level));
        }
    }
    let raw = RawImage::new(bayer::pack_bayer(&mosaic, cfa)?, p.black_level, p.white_level)?;
    let develop = IspParams {
        noise_sigma: None,
        ..p.clone()
    };
    let rgb = isp_forward(&raw, &develop, seed)?;
    Ok((raw, rgb))
}

/// Writes `n` procedural pairs under `out_dir` (`raw/`, `rgb/`,
/// `manifest.toml`) and returns the manifest.
pub fn make_synthetic_dataset(
    n: usize,
    size: (usize, usize),
    p: &IspParams,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n == 0 {
        bail!(InvalidArgument, "dataset size must be at least 1");
    }
    let (h, w) = size;
    if h % 2 != 0 || w % 2 != 0 || h < 16 || w < 16 {
        bail!(InvalidArgument, "image size {h}x{w} must be even and at least 16");
    }
    p.validate()?;
    for sub in ["raw", "rgb"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = DatasetManifest::new(Split::Train, seed);
    manifest.isp.insert(ISP_RECORD.into(), p.clone());
    for i in 0..n {
        let (raw, rgb) = render_pair(h, w, p, derive_seed(seed, i as u64))?;
        let raw_rel = format!("raw/{i:06}.rawd");
        let rgb_rel = format!("rgb/{i:06}.png");
        container::write_raw(&out_dir.join(&raw_rel), &raw)?;
        png_io::write_png(&out_dir.join(&rgb_rel), &rgb)?;
        manifest.entries.push(ManifestEntry {
            rgb: rgb_rel,
            raw: Some(raw_rel),
            isp: Some(ISP_RECORD.into()),
            annotations: Vec::new(),
        });
    }
    manifest.save(out_dir)?;
    manifest.root = out_dir.to_path_buf();
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_arguments() {
        let dir = tempfile::tempdir().unwrap();
        let p = IspParams::default();
        assert!(make_synthetic_dataset(0, (32, 32), &p, 0, dir.path()).is_err());
        assert!(make_synthetic_dataset(1, (31, 32), &p, 0, dir.path()).is_err());
        assert!(make_synthetic_dataset(1, (8, 8), &p, 0, dir.path()).is_err());
    }

    #[test]
    fn pair_dimensions_and_levels() {
        let p = IspParams::default();
        let (raw, rgb) = render_pair(32, 48, &p, 9).unwrap();
        assert_eq!((raw.height(), raw.width()), (16, 24));
        assert_eq!((rgb.height(), rgb.width()), (32, 48));
        assert!(raw.planes.data.iter().all(|&v| v >= p.black_level && v <= p.white_level && v.fract() == 0.0));
        assert!(rgb.planes.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn seeds_are_distinct() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
