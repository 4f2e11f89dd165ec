//! RAW and RGB image representations, Bayer packing, a parametric forward ISP
//! with its analytic inverse, and dataset I/O.

mod bayer;
pub mod container;
pub mod isp;
pub mod manifest;
pub mod png_io;
pub mod synth;

pub use bayer::{demosaic_bilinear, pack_bayer, unpack_bayer};
pub use isp::{isp_forward, isp_inverse_oracle, IspParams};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::make_synthetic_dataset;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Colour filter array layout of the 2x2 sensor quad.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cfa {
    #[default]
    #[serde(rename = "RGGB")]
    Rggb,
}

impl Cfa {
    /// Plane index (R=0, G1=1, G2=2, B=3) sampled at mosaic site `(y, x)`.
    pub fn plane_at(self, y: usize, x: usize) -> usize {
        match self {
            Cfa::Rggb => (y % 2) * 2 + (x % 2),
        }
    }

    /// Colour channel (R=0, G=1, B=2) sampled at mosaic site `(y, x)`.
    pub fn color_at(self, y: usize, x: usize) -> usize {
        match self.plane_at(y, x) {
            0 => 0,
            3 => 2,
            _ => 1,
        }
    }
}

/// Channel-major `channels x h x w` array of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, h: usize, w: usize) -> Self {
        Planes {
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
        }
    }

    pub fn from_vec(channels: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * h * w {
            bail!(
                InvalidArgument,
                "{} samples do not fill {channels}x{h}x{w}",
                data.len()
            );
        }
        Ok(Planes { channels, h, w, data })
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.h + y) * self.w + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    /// Spatial crop of all channels.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Planes> {
        if y0 + h > self.h || x0 + w > self.w {
            bail!(
                InvalidArgument,
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.h,
                self.w
            );
        }
        let mut out = Planes::zeros(self.channels, h, w);
        for c in 0..self.channels {
            for y in 0..h {
                let src = self.idx(c, y0 + y, x0);
                let dst = out.idx(c, y, 0);
                out.data[dst..dst + w].copy_from_slice(&self.data[src..src + w]);
            }
        }
        Ok(out)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Packed RGGB sensor readout: planes `(R, G1, G2, B)` at half the mosaic
/// resolution, in sensor counts.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub planes: Planes,
    pub black_level: f64,
    pub white_level: f64,
    pub cfa: Cfa,
}

impl RawImage {
    pub fn new(planes: Planes, black_level: f64, white_level: f64) -> Result<Self> {
        check_levels(black_level, white_level)?;
        if planes.channels != 4 {
            bail!(InvalidArgument, "RAW pack needs 4 planes, got {}", planes.channels);
        }
        if planes.h == 0 || planes.w == 0 {
            bail!(InvalidArgument, "RAW pack must be at least 1x1");
        }
        Ok(RawImage {
            planes,
            black_level,
            white_level,
            cfa: Cfa::Rggb,
        })
    }

    pub fn height(&self) -> usize {
        self.planes.h
    }

    pub fn width(&self) -> usize {
        self.planes.w
    }

    /// Clamp every sample into `[black_level, white_level]`.
    pub fn clip(&mut self) {
        let (lo, hi) = (self.black_level, self.white_level);
        self.planes.data.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }

    /// Samples mapped to `[-1, 1]`: black → -1, white → +1.
    pub fn normalize(&self) -> Vec<f64> {
        normalize_raw(&self.planes.data, self.black_level, self.white_level)
    }
}

/// Display-referred RGB, 3 planes with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub planes: Planes,
}

impl RgbImage {
    pub fn new(planes: Planes) -> Result<Self> {
        if planes.channels != 3 {
            bail!(InvalidArgument, "RGB image needs 3 planes, got {}", planes.channels);
        }
        Ok(RgbImage { planes })
    }

    pub fn height(&self) -> usize {
        self.planes.h
    }

    pub fn width(&self) -> usize {
        self.planes.w
    }

    /// Values mapped from `[0, 1]` to `[-1, 1]`.
    pub fn normalize(&self) -> Vec<f64> {
        self.planes.data.iter().map(|&v| 2.0 * v - 1.0).collect()
    }
}

/// Model-ready pair: RAW pack and RGB, both in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPair {
    /// `4 x h x w`
    pub raw_n: Vec<f32>,
    /// `3 x 2h x 2w`
    pub rgb_n: Vec<f32>,
    pub h: usize,
    pub w: usize,
}

impl NormalizedPair {
    pub fn from_images(raw: &RawImage, rgb: &RgbImage) -> Result<Self> {
        if rgb.height() != 2 * raw.height() || rgb.width() != 2 * raw.width() {
            bail!(
                Data,
                "RGB {}x{} is not twice the RAW pack {}x{}",
                rgb.height(),
                rgb.width(),
                raw.height(),
                raw.width()
            );
        }
        Ok(NormalizedPair {
            raw_n: raw.normalize().into_iter().map(|v| v as f32).collect(),
            rgb_n: rgb.normalize().into_iter().map(|v| v as f32).collect(),
            h: raw.height(),
            w: raw.width(),
        })
    }
}

pub(crate) fn check_levels(black: f64, white: f64) -> Result<()> {
    if !(black.is_finite() && white.is_finite()) || white <= black {
        bail!(
            Config,
            "white level {white} must exceed black level {black}"
        );
    }
    Ok(())
}

/// `(v - black) / (white - black)` mapped to `[-1, 1]`.
pub fn normalize_raw(values: &[f64], black: f64, white: f64) -> Vec<f64> {
    let range = white - black;
    values.iter().map(|&v| 2.0 * ((v - black) / range) - 1.0).collect()
}

/// Inverse of [`normalize_raw`]; fails when `white <= black`.
pub fn denormalize_raw(values: &[f64], black: f64, white: f64) -> Result<Vec<f64>> {
    check_levels(black, white)?;
    let range = white - black;
    Ok(values.iter().map(|&v| (v + 1.0) * 0.5 * range + black).collect())
}

/// Builds a [`RawImage`] from a normalized `4 x h x w` array.
pub fn raw_from_normalized(values: &[f64], h: usize, w: usize, black: f64, white: f64) -> Result<RawImage> {
    let counts = denormalize_raw(values, black, white)?;
    RawImage::new(Planes::from_vec(4, h, w, counts)?, black, white)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize_raw(&[64.0, 1023.0], 64.0, 1023.0), vec![-1.0, 1.0]);
        assert_eq!(normalize_raw(&[250.0], 0.0, 1000.0), vec![-0.5]);
    }

    #[test]
    fn denormalize_rejects_inverted_levels() {
        assert!(matches!(
            denormalize_raw(&[0.0], 10.0, 10.0),
            Err(crate::Error::Config(_))
        ));
        assert!(RawImage::new(Planes::zeros(4, 1, 1), 5.0, 1.0).is_err());
    }

    #[test]
    fn round_trip_is_tight_for_16_bit_range() {
        let values: Vec<f64> = (0..=65535).step_by(97).map(|v| v as f64).collect();
        let n = normalize_raw(&values, 0.0, 65535.0);
        let back = denormalize_raw(&n, 0.0, 65535.0).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn clip_bounds_samples() {
        let mut r = RawImage::new(Planes::from_vec(4, 1, 1, vec![-3.0, 10.0, 2000.0, 50.0]).unwrap(), 0.0, 1023.0).unwrap();
        r.clip();
        assert_eq!(r.planes.data, vec![0.0, 10.0, 1023.0, 50.0]);
    }

    #[test]
    fn cfa_sites() {
        assert_eq!(Cfa::Rggb.plane_at(0, 0), 0);
        assert_eq!(Cfa::Rggb.plane_at(0, 1), 1);
        assert_eq!(Cfa::Rggb.plane_at(1, 0), 2);
        assert_eq!(Cfa::Rggb.plane_at(3, 3), 3);
        assert_eq!(Cfa::Rggb.color_at(1, 0), 1);
    }
}
