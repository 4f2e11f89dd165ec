//! Parametric forward ISP and its white-box inverse.
//!
//! Forward stage order (fixed):
//! black-level subtraction → optional read noise → white-balance gains with
//! highlight clipping at 1 →
//! bilinear demosaic → colour matrix → clip to `[0, 1]` → gamma encode
//! `v^gamma` → optional 8-bit quantization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{bayer, check_levels, Cfa, Planes, RawImage, RgbImage};
use crate::error::{bail, Result};

/// Camera development parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IspParams {
    pub black_level: f64,
    pub white_level: f64,
    /// Gains for the R, G and B colour channels.
    pub wb_gains: [f64; 3],
    /// Camera RGB → output linear RGB; each row sums to one. With
    /// non-negative entries (as in the presets) the pipeline is monotone in
    /// exposure even when highlights clip.
    pub color_matrix: [[f64; 3]; 3],
    /// Encoding exponent (`1/2.2` for the usual display gamma).
    pub gamma: f64,
    /// Read-noise standard deviation in normalized units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Round the encoded output to 8 bits.
    #[serde(default = "default_true")]
    pub quantize: bool,
}

fn default_true() -> bool {
    true
}

impl Default for IspParams {
    fn default() -> Self {
        IspParams::preset("default").expect("builtin preset")
    }
}

impl IspParams {
    /// Named parameter sets. `default` is a 14-bit sensor with daylight white
    /// balance; `identity` is a pass-through pipeline useful in tests.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(IspParams {
                black_level: 256.0,
                white_level: 16383.0,
                wb_gains: [1.9, 1.0, 1.55],
                color_matrix: [
                    [0.80, 0.15, 0.05],
                    [0.10, 0.80, 0.10],
                    [0.05, 0.15, 0.80],
                ],
                gamma: 1.0 / 2.2,
                noise_sigma: None,
                quantize: true,
            }),
            "identity" => Ok(IspParams {
                black_level: 0.0,
                white_level: 1023.0,
                wb_gains: [1.0, 1.0, 1.0],
                color_matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                gamma: 1.0,
                noise_sigma: None,
                quantize: false,
            }),
            other => bail!(Config, "unknown ISP preset '{other}' (expected 'default' or 'identity')"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_levels(self.black_level, self.white_level)?;
        if self.wb_gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            bail!(Config, "white-balance gains must be positive, got {:?}", self.wb_gains);
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            bail!(Config, "gamma must be positive, got {}", self.gamma);
        }
        if let Some(s) = self.noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                bail!(Config, "noise_sigma must be non-negative, got {s}");
            }
        }
        for (i, row) in self.color_matrix.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                bail!(Config, "colour matrix row {i} sums to {sum}, expected 1");
            }
        }
        let cond = condition_number(&self.color_matrix)?;
        if cond >= 1e6 {
            bail!(Config, "colour matrix is ill-conditioned (condition number {cond:.3e})");
        }
        Ok(())
    }

    pub fn range(&self) -> f64 {
        self.white_level - self.black_level
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse of a 3x3 matrix by cofactors.
pub fn invert3(m: &[[f64; 3]; 3]) -> Result<[[f64; 3]; 3]> {
    let det = det3(m);
    let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !det.is_finite() || det.abs() <= 1e-12 * scale.powi(3).max(f64::MIN_POSITIVE) {
        bail!(Numeric, "colour matrix is singular (det = {det:e})");
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let (r1, r2) = ((c + 1) % 3, (c + 2) % 3);
            let (c1, c2) = ((r + 1) % 3, (r + 2) % 3);
            *v = (m[r1][c1] * m[r2][c2] - m[r1][c2] * m[r2][c1]) / det;
        }
    }
    Ok(inv)
}

fn inf_norm(m: &[[f64; 3]; 3]) -> f64 {
    m.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Infinity-norm condition number.
pub fn condition_number(m: &[[f64; 3]; 3]) -> Result<f64> {
    Ok(inf_norm(m) * inf_norm(&invert3(m)?))
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn gain_for_plane(p: &IspParams, plane: usize) -> f64 {
    match plane {
        0 => p.wb_gains[0],
        3 => p.wb_gains[2],
        _ => p.wb_gains[1],
    }
}

/// Develops a RAW pack into a `3 x 2h x 2w` RGB image.
pub fn isp_forward(raw: &RawImage, p: &IspParams, rng_seed: u64) -> Result<RgbImage> {
    p.validate()?;
    if raw.black_level != p.black_level || raw.white_level != p.white_level {
        bail!(
            Config,
            "RAW levels ({}, {}) differ from ISP levels ({}, {})",
            raw.black_level,
            raw.white_level,
            p.black_level,
            p.white_level
        );
    }
    let range = p.range();
    let mut lin = raw.planes.clone();
    lin.data
        .iter_mut()
        .for_each(|v| *v = ((*v - p.black_level) / range).clamp(0.0, 1.0));
    if let Some(sigma) = p.noise_sigma.filter(|s| *s > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::Config(e.to_string()))?;
        lin.data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    let plane_len = lin.h * lin.w;
    for c in 0..4 {
        let g = gain_for_plane(p, c);
        lin.data[c * plane_len..(c + 1) * plane_len]
            .iter_mut()
            .for_each(|v| *v = (*v * g).min(1.0));
    }
    let mosaic = bayer::unpack_bayer(&lin, raw.cfa)?;
    let cam = bayer::demosaic_bilinear(&mosaic, raw.cfa)?;
    let mut out = Planes::zeros(3, cam.h, cam.w);
    for y in 0..cam.h {
        for x in 0..cam.w {
            let v = mat_vec(&p.color_matrix, [cam.get(0, y, x), cam.get(1, y, x), cam.get(2, y, x)]);
            for (c, val) in v.into_iter().enumerate() {
                let mut e = val.clamp(0.0, 1.0).powf(p.gamma);
                if p.quantize {
                    e = (e * 255.0).round() / 255.0;
                }
                out.set(c, y, x, e);
            }
        }
    }
    RgbImage::new(out)
}

/// Analytic inverse of [`isp_forward`] for known parameters: inverse gamma,
/// inverse colour matrix, inverse white balance, then re-mosaicing by
/// sampling each CFA site. Pixels saturated in all three channels map to the
/// white level. The result is clipped to the valid count range.
pub fn isp_inverse_oracle(rgb: &RgbImage, p: &IspParams) -> Result<RawImage> {
    let inv = invert3(&p.color_matrix)?;
    p.validate()?;
    let (hh, ww) = (rgb.height(), rgb.width());
    if hh % 2 != 0 || ww % 2 != 0 {
        bail!(InvalidArgument, "RGB dimensions {hh}x{ww} must be even");
    }
    let cfa = Cfa::Rggb;
    let mut planes = Planes::zeros(4, hh / 2, ww / 2);
    let range = p.range();
    for y in 0..hh {
        for x in 0..ww {
            let enc = [rgb.planes.get(0, y, x), rgb.planes.get(1, y, x), rgb.planes.get(2, y, x)];
            let plane = cfa.plane_at(y, x);
            let value = if enc.iter().all(|&e| e >= 1.0) {
                1.0
            } else {
                let lin = enc.map(|e| e.max(0.0).powf(1.0 / p.gamma));
                let cam = mat_vec(&inv, lin);
                let c = cfa.color_at(y, x);
                (cam[c] / p.wb_gains[c]).clamp(0.0, 1.0)
            };
            planes.set(plane, y / 2, x / 2, p.black_level + value * range);
        }
    }
    RawImage::new(planes, p.black_level, p.white_level)
}
