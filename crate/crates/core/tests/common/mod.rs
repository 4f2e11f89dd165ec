//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod modulation;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawdiff::raw::isp::invert3;
use rawdiff::raw::synth::render_pair;
use rawdiff::raw::{
    demosaic_bilinear, isp_forward, isp_inverse_oracle, unpack_bayer, Cfa, IspParams, Planes, RawImage,
};

/// Outcome of one forward/inverse ISP round trip.
#[derive(Debug, Default)]
pub struct RoundTrip {
    pub sites: usize,
    pub checked: usize,
    pub max_err: f64,
    /// Largest error / bound over the checked sites (≤ 1 passes).
    pub worst_ratio: f64,
}

/// Round-trips `raw` through the ISP and its inverse and compares every
/// unsaturated site against the quantization bound.
///
/// The encoded value of channel `j` is off by at most `d = 0.5/255`, so its
/// linear value is off by at most `d * max f'(e)` over `[e - d, e + d]`
/// with `f(e) = e^(1/gamma)`. The inverse colour matrix mixes the three
/// channel errors and white balance divides by the site's gain:
/// `|Δraw| <= range / g_c * sum_j |Minv[c][j]| * dL_j`.
///
/// A site is unsaturated when its own white-balanced sample is below 1 and
/// the colour stage output lies inside `[0, 1]` (no clipping touched it).
pub fn isp_roundtrip(raw: &RawImage, p: &IspParams) -> RoundTrip {
    let rgb = isp_forward(raw, p, 0).unwrap();
    let back = isp_inverse_oracle(&rgb, p).unwrap();
    let range = p.range();
    let inv = invert3(&p.color_matrix).unwrap();
    let delta = if p.quantize { 0.5 / 255.0 } else { 0.0 };
    let k = 1.0 / p.gamma;
    let slope = |e: f64| k * e.clamp(1e-12, 1.0).powf(k - 1.0);

    // White-balanced linear samples, with and without highlight clipping.
    let gain = |plane: usize| match plane {
        0 => p.wb_gains[0],
        3 => p.wb_gains[2],
        _ => p.wb_gains[1],
    };
    let mut wb = raw.planes.clone();
    let plane_len = wb.h * wb.w;
    let mut own_clipped = vec![false; wb.data.len()];
    for (i, v) in wb.data.iter_mut().enumerate() {
        let lin = ((*v - p.black_level) / range).clamp(0.0, 1.0) * gain(i / plane_len);
        own_clipped[i] = lin >= 1.0;
        *v = lin.min(1.0);
    }
    let cam = demosaic_bilinear(&unpack_bayer(&wb, Cfa::Rggb).unwrap(), Cfa::Rggb).unwrap();

    let mut out = RoundTrip::default();
    for y in 0..cam.h {
        for x in 0..cam.w {
            out.sites += 1;
            let plane = Cfa::Rggb.plane_at(y, x);
            let idx = raw.planes.idx(plane, y / 2, x / 2);
            let v = [cam.get(0, y, x), cam.get(1, y, x), cam.get(2, y, x)];
            let lin: Vec<f64> = p.color_matrix.iter().map(|r| r[0] * v[0] + r[1] * v[1] + r[2] * v[2]).collect();
            if own_clipped[idx] || lin.iter().any(|&l| !(0.0..=1.0).contains(&l)) {
                continue;
            }
            out.checked += 1;
            let c = Cfa::Rggb.color_at(y, x);
            let mut bound = 0.0;
            for j in 0..3 {
                let e = rgb.planes.get(j, y, x);
                let dl = delta * slope((e - delta).max(0.0)).max(slope((e + delta).min(1.0)));
                bound += inv[c][j].abs() * dl;
            }
            bound *= range / p.wb_gains[c];
            let err = (back.planes.data[idx] - raw.planes.data[idx]).abs();
            // Float slack: a few ulps of the count range.
            let slack = 1e-9 * range;
            out.max_err = out.max_err.max(err);
            let ratio = if bound + slack > 0.0 { err / (bound + slack) } else { 0.0 };
            out.worst_ratio = out.worst_ratio.max(ratio);
        }
    }
    out
}

/// RAW packs of size `h x w` (mosaic `2h x 2w`) for ISP tests: even indices
/// are uniform-random counts in the lower part of the range, odd indices
/// are procedural scenes.
pub fn isp_test_raw(i: u64, h: usize, w: usize, p: &IspParams) -> RawImage {
    if i % 2 == 1 {
        return render_pair(2 * h, 2 * w, p, 1000 + i).unwrap().0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(i);
    let data = (0..4 * h * w)
        .map(|_| (p.black_level + rng.gen_range(0.0..0.55) * p.range()).round())
        .collect();
    RawImage::new(Planes::from_vec(4, h, w, data).unwrap(), p.black_level, p.white_level).unwrap()
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Two-sided acceptance band `[lo, hi]` for `Binomial(n, p)` at level
/// `alpha`: each tail outside the band has probability at most `alpha / 2`.
/// Exact pmf summation in log space.
pub fn binomial_band(n: u64, p: f64, alpha: f64) -> (u64, u64) {
    if p == 0.0 {
        return (0, 0);
    }
    if p == 1.0 {
        return (n, n);
    }
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for k in 1..=n as usize {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let pmf = |k: u64| {
        let k = k as usize;
        (ln_fact[n as usize] - ln_fact[k] - ln_fact[n as usize - k] + k as f64 * p.ln() + (n as usize - k) as f64 * (1.0 - p).ln())
            .exp()
    };
    let (mut lo, mut tail) = (0u64, 0.0);
    while tail + pmf(lo) <= alpha / 2.0 {
        tail += pmf(lo);
        lo += 1;
    }
    let (mut hi, mut tail) = (n, 0.0);
    while tail + pmf(hi) <= alpha / 2.0 {
        tail += pmf(hi);
        hi -= 1;
    }
    (lo, hi)
}

/// Upper 0.1% point of the chi-square distribution with `df` degrees of
/// freedom (Wilson-Hilferty; accurate to well under 0.1% for `df` in the
/// hundreds).
pub fn chi2_upper_001(df: usize) -> f64 {
    let k = df as f64;
    let z = 3.090_232_306_167_813;
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}
